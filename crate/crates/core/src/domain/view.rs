use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of camera poses in the rendering rig.
pub const NUM_RIG_VIEWS: usize = 24;
/// Smallest accepted image side.
pub const MIN_VIEW_SIDE: usize = 16;

/// One rendered view of an object. Pixels are stored channel-first (`C x H x W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewImage<T: Real> {
    pub pixels: Array3<T>,
    pub view_index: usize,
    pub object_id: u64,
}

impl<T: Real> ViewImage<T> {
    pub fn new(pixels: Array3<T>, view_index: usize, object_id: u64) -> Result<Self> {
        let (_, h, w) = pixels.dim();
        if h < MIN_VIEW_SIDE || w < MIN_VIEW_SIDE {
            return Err(Error::InvalidInput(format!(
                "view must be at least {MIN_VIEW_SIDE}x{MIN_VIEW_SIDE}, got {h}x{w}"
            )));
        }
        if view_index >= NUM_RIG_VIEWS {
            return Err(Error::InvalidInput(format!(
                "view index {view_index} outside [0, {NUM_RIG_VIEWS})"
            )));
        }
        if pixels
            .iter()
            .any(|&p| !p.is_finite() || p < T::zero() || p > T::one())
        {
            return Err(Error::InvalidInput("pixels must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            view_index,
            object_id,
        })
    }

    /// Single-channel image from an `H x W` plane.
    pub fn from_plane(plane: Array2<T>, view_index: usize, object_id: u64) -> Result<Self> {
        let (h, w) = plane.dim();
        let pixels = plane
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((1, h, w))
            .expect("standard layout");
        Self::new(pixels, view_index, object_id)
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    /// Repeats channel 0 until the image has `channels` channels.
    pub fn broadcast_channels(&self, channels: usize) -> Array3<T> {
        let (_, h, w) = self.pixels.dim();
        Array3::from_shape_fn((channels, h, w), |(_, y, x)| self.pixels[[0, y, x]])
    }
}

/// The rendered views of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSet<T: Real> {
    pub object_id: u64,
    pub views: Vec<ViewImage<T>>,
}

impl<T: Real> ViewSet<T> {
    pub fn new(object_id: u64, views: Vec<ViewImage<T>>) -> Result<Self> {
        if views.is_empty() || views.len() > NUM_RIG_VIEWS {
            return Err(Error::InvalidInput(format!(
                "a view set holds 1..={NUM_RIG_VIEWS} views, got {}",
                views.len()
            )));
        }
        let unique: BTreeSet<usize> = views.iter().map(|v| v.view_index).collect();
        if unique.len() != views.len() {
            return Err(Error::InvalidInput("duplicate view_index in view set".into()));
        }
        if views.iter().any(|v| v.object_id != object_id) {
            return Err(Error::InvalidInput(
                "view belongs to a different object".into(),
            ));
        }
        Ok(Self { object_id, views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn by_index(&self, view_index: usize) -> Option<&ViewImage<T>> {
        self.views.iter().find(|v| v.view_index == view_index)
    }
}
