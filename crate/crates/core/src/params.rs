//! Flat parameter vectors with a named-segment layout.
//!
//! Every model in the crate (pre-trained, fine-tuned, merged) and every task
//! vector is a [`ParamVector`]. Arithmetic between two vectors is only
//! defined when their layouts are identical: same names, offsets and lengths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous segments covering `[0, total_len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct SegmentLayout {
    segments: Vec<Segment>,
    total_len: usize,
}

impl SegmentLayout {
    /// Builds a layout from `(name, length)` pairs laid out back to back.
    pub fn from_lengths<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment { name: name.into(), offset, len };
                offset += len;
                seg
            })
            .collect();
        Self::from_segments(segments)
    }

    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut expected = 0;
        for (i, seg) in segments.iter().enumerate() {
            if seg.offset != expected {
                return Err(Error::InvalidLayout(format!(
                    "segment `{}` starts at {} but the previous segment ends at {}",
                    seg.name, seg.offset, expected
                )));
            }
            if segments[..i].iter().any(|s| s.name == seg.name) {
                return Err(Error::InvalidLayout(format!("duplicate segment name `{}`", seg.name)));
            }
            expected += seg.len;
        }
        Ok(Self { segments, total_len: expected })
    }

    /// A single segment named `name` covering `len` entries.
    pub fn single(name: &str, len: usize) -> Self {
        Self::from_lengths([(name, len)]).expect("single segment is always valid")
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Errors with the name of the first segment where the two layouts differ.
    pub fn ensure_same(&self, other: &SegmentLayout) -> Result<()> {
        if self == other {
            return Ok(());
        }
        let n = self.segments.len().max(other.segments.len());
        for i in 0..n {
            match (self.segments.get(i), other.segments.get(i)) {
                (Some(a), Some(b)) if a == b => continue,
                (Some(a), _) => return Err(Error::LayoutMismatch { segment: a.name.clone() }),
                (None, Some(b)) => return Err(Error::LayoutMismatch { segment: b.name.clone() }),
                (None, None) => unreachable!(),
            }
        }
        unreachable!("layouts differ but no differing segment found")
    }
}

impl TryFrom<Vec<Segment>> for SegmentLayout {
    type Error = Error;

    fn try_from(segments: Vec<Segment>) -> Result<Self> {
        Self::from_segments(segments)
    }
}

impl From<SegmentLayout> for Vec<Segment> {
    fn from(layout: SegmentLayout) -> Self {
        layout.segments
    }
}

/// Parameter values with their layout. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: SegmentLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: SegmentLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch { expected: layout.total_len(), actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter entry {i} is {}", values[i])));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: SegmentLayout) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { layout, values }
    }

    pub fn layout(&self) -> &SegmentLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.layout.ensure_same(&other.layout)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|v| v * factor).collect())
    }
}

/// `fine_tuned - pretrained`, element-wise.
pub fn task_vector(fine_tuned: &ParamVector, pretrained: &ParamVector) -> Result<ParamVector> {
    fine_tuned.layout.ensure_same(&pretrained.layout)?;
    let values = fine_tuned.values.iter().zip(&pretrained.values).map(|(a, b)| a - b).collect();
    fine_tuned.with_values(values)
}

/// `pretrained + sum_i coefficient_i * tau_i`.
pub fn axpy_into_pretrained(pretrained: &ParamVector, scaled_taus: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    let mut values = pretrained.values.clone();
    for &(coefficient, tau) in scaled_taus {
        if !coefficient.is_finite() {
            return Err(Error::NonFinite(format!("coefficient {coefficient}")));
        }
        pretrained.layout.ensure_same(&tau.layout)?;
        for (v, t) in values.iter_mut().zip(&tau.values) {
            *v += coefficient * t;
        }
    }
    pretrained.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec3(values: [f64; 3]) -> ParamVector {
        ParamVector::new(SegmentLayout::single("w", 3), values.to_vec()).unwrap()
    }

    fn random_vector(layout: &SegmentLayout, rng: &mut ChaCha8Rng) -> ParamVector {
        let values = (0..layout.total_len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        ParamVector::new(layout.clone(), values).unwrap()
    }

    #[test]
    fn layout_rejects_gaps_and_duplicates() {
        let gap = vec![Segment { name: "a".into(), offset: 0, len: 2 }, Segment { name: "b".into(), offset: 3, len: 1 }];
        assert!(SegmentLayout::from_segments(gap).is_err());
        assert!(SegmentLayout::from_lengths([("a", 2), ("a", 1)]).is_err());
        let ok = SegmentLayout::from_lengths([("a", 2), ("b", 5)]).unwrap();
        assert_eq!(ok.total_len(), 7);
        assert_eq!(ok.segment("b").unwrap().offset, 2);
    }

    #[test]
    fn rejects_non_finite_entries() {
        let err = ParamVector::new(SegmentLayout::single("w", 2), vec![1.0, f64::NAN]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn task_vector_of_identical_models_is_zero() {
        let theta = vec3([0.3, -1.0, 2.5]);
        assert_eq!(task_vector(&theta, &theta).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn task_vector_direct_subtraction() {
        let tau = task_vector(&vec3([1.0, 2.0, 3.0]), &vec3([1.0, 1.0, 1.0])).unwrap();
        assert_eq!(tau.values(), &[0.0, 1.0, 2.0]);
        assert_eq!(tau.layout(), &SegmentLayout::single("w", 3));
    }

    #[test]
    fn task_vector_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layout = SegmentLayout::from_lengths([("w", 40), ("b", 10)]).unwrap();
        let a = random_vector(&layout, &mut rng);
        let b = random_vector(&layout, &mut rng);
        let tau = task_vector(&a, &b).unwrap();
        for i in 0..50 {
            assert_eq!(tau.values()[i], a.values()[i] - b.values()[i]);
        }
    }

    #[test]
    fn task_vector_names_first_differing_segment() {
        let left = ParamVector::zeros(SegmentLayout::from_lengths([("w", 2), ("b", 1)]).unwrap());
        let right = ParamVector::zeros(SegmentLayout::from_lengths([("w", 2), ("bias", 1)]).unwrap());
        match task_vector(&left, &right) {
            Err(Error::LayoutMismatch { segment }) => assert_eq!(segment, "b"),
            other => panic!("unexpected {other:?}"),
        }
        // Same total length, different split.
        let split = ParamVector::zeros(SegmentLayout::from_lengths([("w", 1), ("b", 2)]).unwrap());
        match task_vector(&left, &split) {
            Err(Error::LayoutMismatch { segment }) => assert_eq!(segment, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn axpy_empty_and_single() {
        let pre = vec3([1.0, 1.0, 1.0]);
        let ft = vec3([1.5, -2.0, 4.0]);
        assert_eq!(axpy_into_pretrained(&pre, &[]).unwrap(), pre);
        let tau = task_vector(&ft, &pre).unwrap();
        assert_eq!(axpy_into_pretrained(&pre, &[(1.0, &tau)]).unwrap(), ft);
    }

    #[test]
    fn axpy_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = SegmentLayout::single("w", 20);
        let pre = random_vector(&layout, &mut rng);
        let t1 = random_vector(&layout, &mut rng);
        let t2 = random_vector(&layout, &mut rng);
        let merged = axpy_into_pretrained(&pre, &[(0.7, &t1), (-0.2, &t2)]).unwrap();
        for i in 0..20 {
            let mut expected = pre.values()[i];
            expected += 0.7 * t1.values()[i];
            expected += -0.2 * t2.values()[i];
            assert_eq!(merged.values()[i], expected);
        }
    }

    #[test]
    fn axpy_rejects_non_finite_coefficient() {
        let pre = vec3([0.0; 3]);
        assert!(axpy_into_pretrained(&pre, &[(f64::INFINITY, &pre)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn task_vector_inverts_unit_axpy(
                pre in prop::collection::vec(-1e3f64..1e3, 1..40),
                seed in any::<u64>(),
            ) {
                let layout = SegmentLayout::single("w", pre.len());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let tau = random_vector(&layout, &mut rng);
                let pre = ParamVector::new(layout, pre).unwrap();
                let ft = axpy_into_pretrained(&pre, &[(1.0, &tau)]).unwrap();
                let back = task_vector(&ft, &pre).unwrap();
                // (p + t) - p == t exactly is not guaranteed in IEEE arithmetic,
                // but holds to one rounding of the larger operand.
                for (b, t) in back.values().iter().zip(tau.values()) {
                    let ulp = f64::EPSILON * (b.abs().max(1e3));
                    prop_assert!((b - t).abs() <= ulp);
                }
            }

            #[test]
            fn axpy_is_linear_in_the_coefficient(
                a in -5.0f64..5.0, b in -5.0f64..5.0, seed in any::<u64>(),
            ) {
                let layout = SegmentLayout::single("w", 16);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let zero = ParamVector::zeros(layout.clone());
                let tau = random_vector(&layout, &mut rng);
                let joint = axpy_into_pretrained(&zero, &[(a + b, &tau)]).unwrap();
                let left = axpy_into_pretrained(&zero, &[(a, &tau)]).unwrap();
                let right = axpy_into_pretrained(&zero, &[(b, &tau)]).unwrap();
                for i in 0..16 {
                    let sum = left.values()[i] + right.values()[i];
                    let tol = 4.0 * f64::EPSILON * (joint.values()[i].abs() + left.values()[i].abs() + right.values()[i].abs());
                    prop_assert!((joint.values()[i] - sum).abs() <= tol);
                }
            }
        }
    }
}
