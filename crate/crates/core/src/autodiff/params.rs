use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Named window into a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builder for the segment table. Frozen once turned into a [`ParamVector`].
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> &Segment {
        self.segments.push(Segment {
            name: name.into(),
            shape: [rows, cols],
            offset: self.total,
        });
        self.total += rows * cols;
        self.segments.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn zeros(self) -> ParamVector {
        ParamVector {
            values: vec![0.0; self.total],
            segments: self.segments,
        }
    }
}

/// Flat parameter storage plus its immutable segment table.
///
/// Serialises as `{"segments": [{name, shape, offset}], "values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn from_parts(segments: Vec<Segment>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        let total: usize = segments.iter().map(Segment::len).sum();
        if total != values.len() {
            return Err(AutodiffError::ShapeMismatch {
                expected: total,
                got: values.len(),
            });
        }
        let mut offset = 0;
        for s in &segments {
            if s.offset != offset {
                return Err(AutodiffError::ShapeMismatch {
                    expected: offset,
                    got: s.offset,
                });
            }
            offset += s.len();
        }
        Ok(ParamVector { segments, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Result<&Segment, AutodiffError> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| AutodiffError::UnknownSegment(name.to_string()))
    }

    pub fn segment_values(&self, name: &str) -> Result<&[f64], AutodiffError> {
        let s = self.segment(name)?;
        Ok(&self.values[s.offset..s.offset + s.len()])
    }

    pub fn segment_values_mut(&mut self, name: &str) -> Result<&mut [f64], AutodiffError> {
        let s = self.segment(name)?.clone();
        Ok(&mut self.values[s.offset..s.offset + s.len()])
    }

    /// Glorot-uniform weights for every `*.w` segment; everything else zero.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for s in &self.segments {
            let window = &mut self.values[s.offset..s.offset + s.len()];
            if s.name.ends_with(".w") {
                let limit = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                window.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
            } else {
                window.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
