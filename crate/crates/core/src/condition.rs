//! Caption conditioning from a tiny fixed vocabulary.

use crate::error::{CoreError, Result};

/// Embedding width shared by every caption.
pub const CONDITION_DIM: usize = 8;

/// A conditioning signal: a caption id plus its embedding vector. The null
/// condition carries the reserved all-zero embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    id: String,
    embedding: Vec<f32>,
    is_null: bool,
}

impl Condition {
    pub fn null() -> Self {
        Condition { id: String::new(), embedding: vec![0.0; CONDITION_DIM], is_null: true }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn embedding(&self) -> &[f32] {
        &self.embedding
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }
}

/// Compositional embeddings for the synthetic captions: one slot per color,
/// one per shape. "<color>_<shape>" ids, e.g. "red_square".
#[derive(Clone, Debug)]
pub struct CaptionVocab {
    colors: Vec<&'static str>,
    shapes: Vec<&'static str>,
}

impl Default for CaptionVocab {
    fn default() -> Self {
        Self::builtin()
    }
}

impl CaptionVocab {
    pub fn builtin() -> Self {
        CaptionVocab {
            colors: vec!["red", "green", "blue"],
            shapes: vec!["square", "circle"],
        }
    }

    pub fn ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.colors {
            for s in &self.shapes {
                out.push(format!("{}_{}", c, s));
            }
        }
        out
    }

    /// Looks up a caption id, or the null condition for the empty string.
    pub fn condition(&self, id: &str) -> Result<Condition> {
        if id.is_empty() {
            return Ok(Condition::null());
        }
        let (color, shape) = id
            .split_once('_')
            .ok_or_else(|| CoreError::UnknownCondition(id.to_string()))?;
        let ci = self
            .colors
            .iter()
            .position(|c| *c == color)
            .ok_or_else(|| CoreError::UnknownCondition(id.to_string()))?;
        let si = self
            .shapes
            .iter()
            .position(|s| *s == shape)
            .ok_or_else(|| CoreError::UnknownCondition(id.to_string()))?;
        let mut embedding = vec![0.0; CONDITION_DIM];
        embedding[ci] = 1.0;
        embedding[self.colors.len() + si] = 1.0;
        Ok(Condition { id: id.to_string(), embedding, is_null: false })
    }
}
