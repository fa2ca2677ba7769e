//! The group lattice: named attributes, their levels, and the row-major
//! indexing of intersectional groups.

use crate::error::{Error, Result};

/// A single categorical attribute with named levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub levels: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            levels,
        }
    }
}

/// Cartesian product of `k` attributes. Groups are indexed 1..=d in row-major
/// order of the class tuple, last attribute varying fastest. Every vector in
/// the rest of the crate (means, counts, estimates) uses this ordering, with
/// group `g` stored at position `g - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpace {
    attributes: Vec<Attribute>,
    dims: Vec<usize>,
    d: usize,
}

impl AttributeSpace {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::EmptySpace);
        }
        let mut dims = Vec::with_capacity(attributes.len());
        for attr in &attributes {
            if attr.levels.is_empty() {
                return Err(Error::EmptySpace);
            }
            for (i, l) in attr.levels.iter().enumerate() {
                if attr.levels[..i].contains(l) {
                    return Err(Error::DuplicateLevels(attr.name.clone()));
                }
            }
            dims.push(attr.levels.len());
        }
        let d = dims.iter().product();
        Ok(Self {
            attributes,
            dims,
            d,
        })
    }

    /// Convenience constructor with synthetic names (`attr1`, ...) and level
    /// labels (`1`, `2`, ...).
    pub fn from_level_counts(counts: &[usize]) -> Result<Self> {
        let attributes = counts
            .iter()
            .enumerate()
            .map(|(a, &da)| {
                Attribute::new(
                    format!("attr{}", a + 1),
                    (1..=da).map(|l| l.to_string()).collect(),
                )
            })
            .collect();
        Self::new(attributes)
    }

    /// Number of attributes `k`.
    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    /// Total number of groups `d`.
    pub fn group_count(&self) -> usize {
        self.d
    }

    pub fn level_counts(&self) -> &[usize] {
        &self.dims
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    /// Row-major group index of a 1-based class tuple; the result is 1-based.
    pub fn group_index(&self, classes: &[usize]) -> Result<usize> {
        if classes.len() != self.dims.len() {
            return Err(Error::ClassTupleLength {
                expected: self.dims.len(),
                actual: classes.len(),
            });
        }
        let mut g = 0usize;
        for (a, (&c, &da)) in classes.iter().zip(&self.dims).enumerate() {
            if c < 1 || c > da {
                return Err(Error::ClassOutOfRange {
                    attribute: self.attributes[a].name.clone(),
                    class: c,
                    levels: da,
                });
            }
            g = g * da + (c - 1);
        }
        Ok(g + 1)
    }

    /// Inverse of [`group_index`](Self::group_index): the 1-based class tuple
    /// of a 1-based group index.
    pub fn group_classes(&self, group: usize) -> Result<Vec<usize>> {
        if group < 1 || group > self.d {
            return Err(Error::GroupOutOfRange {
                group,
                count: self.d,
            });
        }
        let mut rem = group - 1;
        let mut classes = vec![0usize; self.dims.len()];
        for (a, &da) in self.dims.iter().enumerate().rev() {
            classes[a] = rem % da + 1;
            rem /= da;
        }
        Ok(classes)
    }

    /// 1-based class index of a level label within attribute `attr` (0-based
    /// attribute position).
    pub fn class_of_label(&self, attr: usize, label: &str) -> Result<usize> {
        let a = &self.attributes[attr];
        a.levels
            .iter()
            .position(|l| l == label)
            .map(|p| p + 1)
            .ok_or_else(|| Error::UnknownLevel {
                attribute: a.name.clone(),
                label: label.to_string(),
                known: a.levels.join(", "),
            })
    }
}
