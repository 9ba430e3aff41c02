use std::sync::Arc;

use super::{CoordSet, VoxelCoord};
use crate::error::ensure_dim;
use crate::{Real, Result};

/// Sparse voxel tensor: `N` coordinates with an `N x C` row-major feature matrix.
#[derive(Debug, Clone)]
pub struct SparseTensor<T> {
    coords: Arc<CoordSet>,
    features: Vec<T>,
    channels: usize,
}

impl<T: Real> SparseTensor<T> {
    pub fn new(coords: Vec<VoxelCoord>, features: Vec<T>, channels: usize) -> Result<Self> {
        Self::from_set(Arc::new(CoordSet::new(coords)?), features, channels)
    }

    pub fn from_set(coords: Arc<CoordSet>, features: Vec<T>, channels: usize) -> Result<Self> {
        ensure_dim("feature matrix", coords.len() * channels, features.len())?;
        Ok(Self {
            coords,
            features,
            channels,
        })
    }

    pub fn zeros(coords: Arc<CoordSet>, channels: usize) -> Self {
        let features = vec![T::zero(); coords.len() * channels];
        Self {
            coords,
            features,
            channels,
        }
    }

    pub fn empty(channels: usize) -> Self {
        Self::zeros(Arc::new(CoordSet::default()), channels)
    }

    /// New tensor on the same coordinate set.
    pub fn with_features(&self, features: Vec<T>, channels: usize) -> Result<Self> {
        Self::from_set(self.coords.clone(), features, channels)
    }

    pub fn coord_set(&self) -> &Arc<CoordSet> {
        &self.coords
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        self.coords.coords()
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [T] {
        &mut self.features
    }

    pub fn into_features(self) -> Vec<T> {
        self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn query(&self, c: &VoxelCoord) -> Option<usize> {
        self.coords.query(c)
    }

    pub fn same_coords(&self, other: &SparseTensor<T>) -> bool {
        Arc::ptr_eq(&self.coords, &other.coords) || self.coords() == other.coords()
    }

    /// Converts the feature precision, keeping coordinates.
    pub fn cast<U: Real>(&self) -> SparseTensor<U> {
        SparseTensor {
            coords: self.coords.clone(),
            features: self.features.iter().map(|v| U::of(v.as_f64())).collect(),
            channels: self.channels,
        }
    }
}
