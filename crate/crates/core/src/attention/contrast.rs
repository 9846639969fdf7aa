use serde::{Deserialize, Serialize};

use super::grid::{AttentionStack, Grid};
use crate::error::{Error, Result};
use crate::parallel::{self, Execution};

/// `pos / (neg + epsilon)`, elementwise, layers processed in parallel.
pub fn contrast_attention(pos: &AttentionStack, neg: &AttentionStack, epsilon: f64) -> Result<AttentionStack> {
    contrast_attention_with(Execution::default(), pos, neg, epsilon)
}

pub fn contrast_attention_with(
    exec: Execution,
    pos: &AttentionStack,
    neg: &AttentionStack,
    epsilon: f64,
) -> Result<AttentionStack> {
    if pos.dims() != neg.dims() {
        return Err(Error::DimensionMismatch(format!(
            "positive attention is {:?}, negative is {:?}",
            pos.dims(),
            neg.dims()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let (l, h, w) = pos.dims();
    let mut out = vec![0.0; pos.data().len()];
    parallel::for_each_chunk_mut(exec, &mut out, h * w, |layer, chunk| {
        for ((o, a), b) in chunk.iter_mut().zip(pos.layer(layer)).zip(neg.layer(layer)) {
            *o = a / (b + epsilon);
        }
    });
    AttentionStack::new(l, h, w, out)
}

/// Inclusive layer range with per-layer fusion weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    lo: usize,
    hi: usize,
    weights: Vec<f64>,
}

impl FusionSpec {
    /// Weights must be nonnegative, nondecreasing and sum to 1.
    pub fn new(lo: usize, hi: usize, weights: Vec<f64>) -> Result<Self> {
        if lo > hi {
            return Err(Error::invalid(format!("layer range {lo}:{hi} is reversed")));
        }
        if weights.len() != hi - lo + 1 {
            return Err(Error::invalid(format!(
                "layer range {lo}:{hi} needs {} weights, got {}",
                hi - lo + 1,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("fusion weights must be finite and >= 0"));
        }
        if weights.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::invalid("fusion weights must be nondecreasing with depth"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("fusion weights sum to {total}, not 1")));
        }
        Ok(Self { lo, hi, weights })
    }

    /// Linear ramp: layer `l` gets weight proportional to `l - lo + 1`.
    pub fn ramp(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::invalid(format!("layer range {lo}:{hi} is reversed")));
        }
        let n = hi - lo + 1;
        let total = (n * (n + 1) / 2) as f64;
        Self::new(lo, hi, (1..=n).map(|k| k as f64 / total).collect())
    }

    pub fn range(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted sum of the layers in `spec`'s range.
pub fn fuse_layers(a: &AttentionStack, spec: &FusionSpec) -> Result<Grid> {
    if spec.hi >= a.layers() {
        return Err(Error::invalid(format!(
            "layer range {}:{} outside a stack of {} layers",
            spec.lo,
            spec.hi,
            a.layers()
        )));
    }
    let mut s = vec![0.0; a.layer_len()];
    for (k, &w) in spec.weights.iter().enumerate() {
        for (acc, v) in s.iter_mut().zip(a.layer(spec.lo + k)) {
            *acc += w * v;
        }
    }
    Grid::new(a.width(), a.height(), s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(layers: &[&[f64]], h: usize, w: usize) -> AttentionStack {
        AttentionStack::new(layers.len(), h, w, layers.concat()).unwrap()
    }

    #[test]
    fn uniform_negative_keeps_argmax() {
        let pos = stack(&[&[0.1, 0.5, 0.2, 0.2], &[0.7, 0.1, 0.1, 0.1]], 2, 2);
        let neg = stack(&[&[0.25; 4], &[0.25; 4]], 2, 2);
        let c = contrast_attention(&pos, &neg, 1e-6).unwrap();
        for l in 0..2 {
            assert_eq!(c.layer_grid(l).argmax(), pos.layer_grid(l).argmax());
        }
    }

    #[test]
    fn self_contrast_is_monotone() {
        let pos = stack(&[&[0.1, 0.5, 0.2, 0.3]], 2, 2);
        let c = contrast_attention(&pos, &pos, 0.05).unwrap();
        for (a, v) in c.data().iter().zip(pos.data()) {
            assert!((a - v / (v + 0.05)).abs() < 1e-15);
        }
        let mut order_p: Vec<usize> = (0..4).collect();
        order_p.sort_by(|&i, &j| pos.data()[i].total_cmp(&pos.data()[j]));
        let mut order_c: Vec<usize> = (0..4).collect();
        order_c.sort_by(|&i, &j| c.data()[i].total_cmp(&c.data()[j]));
        assert_eq!(order_p, order_c);
    }

    #[test]
    fn contrast_errors() {
        let a = stack(&[&[0.1, 0.5]], 1, 2);
        let b = stack(&[&[0.1], &[0.5]], 1, 1);
        assert!(matches!(
            contrast_attention(&a, &b, 1e-6),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(contrast_attention(&a, &a, 0.0).is_err());
        assert!(contrast_attention(&a, &a, -1.0).is_err());
    }

    #[test]
    fn default_ramp_weights() {
        let f = FusionSpec::ramp(20, 25).unwrap();
        let w = f.weights();
        assert_eq!(w.len(), 6);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[5] / w[0] - 6.0).abs() < 1e-12);
        assert!((w[0] - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn fusion_spec_validation() {
        assert!(FusionSpec::new(2, 1, vec![]).is_err());
        assert!(FusionSpec::new(0, 1, vec![0.6, 0.4]).is_err());
        assert!(FusionSpec::new(0, 1, vec![0.2, 0.2]).is_err());
        assert!(FusionSpec::new(0, 1, vec![0.5]).is_err());
        assert!(FusionSpec::new(0, 1, vec![0.4, 0.6]).is_ok());
    }

    #[test]
    fn fuse_single_and_identical_layers() {
        let a = stack(&[&[1.0, 2.0], &[3.0, 4.0], &[3.0, 4.0]], 1, 2);
        let s = fuse_layers(&a, &FusionSpec::ramp(0, 0).unwrap()).unwrap();
        assert_eq!(s.data, vec![1.0, 2.0]);
        let s = fuse_layers(&a, &FusionSpec::new(1, 2, vec![0.3, 0.7]).unwrap()).unwrap();
        for (x, e) in s.data.iter().zip([3.0, 4.0]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!(fuse_layers(&a, &FusionSpec::ramp(2, 3).unwrap()).is_err());
    }
}
