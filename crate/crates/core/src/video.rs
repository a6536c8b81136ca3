//! Video and mask containers.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// An N-frame dense video, stored as a rank-4 tensor [frames, channels, h, w].
#[derive(Clone, Debug, PartialEq)]
pub struct Video(Tensor);

impl Video {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Ok(Video(Tensor::new(vec![frames, channels, height, width], data)?))
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Video(Tensor::zeros(&[frames, channels, height, width]))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(CoreError::invalid(
                "Video::from_tensor",
                format!("expected rank 4, got {:?}", t.shape()),
            ));
        }
        Ok(Video(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }

    pub fn same_geometry(&self, other: &Video) -> bool {
        self.0.shape() == other.0.shape()
    }

    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f32 {
        let (ch, h, w) = (self.channels(), self.height(), self.width());
        self.0.data()[((n * ch + c) * h + i) * w + j]
    }

    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f32) {
        let (ch, h, w) = (self.channels(), self.height(), self.width());
        let idx = ((n * ch + c) * h + i) * w + j;
        self.0.data_mut()[idx] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.0.all_finite()
    }

    /// Elementwise a + s * b.
    pub fn axpy(&self, s: f32, b: &Video) -> Result<Video> {
        if !self.same_geometry(b) {
            return Err(CoreError::shapes("axpy", self.0.shape(), b.0.shape()));
        }
        let data = self
            .data()
            .iter()
            .zip(b.data())
            .map(|(a, bv)| a + s * bv)
            .collect();
        Video::new(self.frames(), self.channels(), self.height(), self.width(), data)
    }

    pub fn sub(&self, b: &Video) -> Result<Video> {
        Ok(Video(self.0.sub(&b.0)?))
    }

    pub fn scale(&self, s: f32) -> Video {
        Video(self.0.scale(s))
    }

    pub fn l2_norm(&self) -> f32 {
        let mut acc = 0.0f64;
        for v in self.data() {
            acc += (*v as f64) * (*v as f64);
        }
        acc.sqrt() as f32
    }

    pub fn l2_distance(&self, other: &Video) -> Result<f32> {
        if !self.same_geometry(other) {
            return Err(CoreError::shapes("l2_distance", self.0.shape(), other.0.shape()));
        }
        let mut acc = 0.0f64;
        for (a, b) in self.data().iter().zip(other.data()) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        Ok(acc.sqrt() as f32)
    }
}

/// Per-frame binary masks with the video's frame geometry, broadcast over
/// channels when applied.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSequence {
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl MaskSequence {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != frames * height * width {
            return Err(CoreError::invalid(
                "MaskSequence::new",
                format!(
                    "expected {} values for {}x{}x{}, got {}",
                    frames * height * width,
                    frames,
                    height,
                    width,
                    values.len()
                ),
            ));
        }
        if let Some(v) = values.iter().find(|v| **v > 1) {
            return Err(CoreError::invalid(
                "MaskSequence::new",
                format!("mask values must be 0 or 1, found {}", v),
            ));
        }
        Ok(MaskSequence { frames, height, width, values })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        MaskSequence { frames, height, width, values: vec![0; frames * height * width] }
    }

    pub fn ones(frames: usize, height: usize, width: usize) -> Self {
        MaskSequence { frames, height, width, values: vec![1; frames * height * width] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> u8 {
        self.values[(n * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, n: usize, i: usize, j: usize, v: u8) {
        self.values[(n * self.height + i) * self.width + j] = v & 1;
    }

    pub fn matches_video(&self, v: &Video) -> bool {
        self.frames == v.frames() && self.height == v.height() && self.width == v.width()
    }

    /// Number of set pixels in frame `n`.
    pub fn frame_count(&self, n: usize) -> usize {
        let base = n * self.height * self.width;
        self.values[base..base + self.height * self.width]
            .iter()
            .map(|v| *v as usize)
            .sum()
    }

    /// Grows every set pixel into a (2r+1)-square neighborhood, clipped at
    /// the frame border.
    pub fn dilate(&self, r: usize) -> MaskSequence {
        if r == 0 {
            return self.clone();
        }
        let mut out = MaskSequence::zeros(self.frames, self.height, self.width);
        for n in 0..self.frames {
            for i in 0..self.height {
                for j in 0..self.width {
                    if self.get(n, i, j) == 0 {
                        continue;
                    }
                    let i0 = i.saturating_sub(r);
                    let i1 = (i + r).min(self.height - 1);
                    let j0 = j.saturating_sub(r);
                    let j1 = (j + r).min(self.width - 1);
                    for ii in i0..=i1 {
                        for jj in j0..=j1 {
                            out.set(n, ii, jj, 1);
                        }
                    }
                }
            }
        }
        out
    }
}
