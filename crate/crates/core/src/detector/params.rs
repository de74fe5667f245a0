use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::array::Array;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const REPRESENTATION: &str = "representation.";
pub const CLASSIFIER_WEIGHT: &str = "detector.classifier.weight";
pub const CLASSIFIER_BIAS: &str = "detector.classifier.bias";
pub const REGRESSOR_WEIGHT: &str = "detector.regressor.weight";
pub const REGRESSOR_BIAS: &str = "detector.regressor.bias";
/// Output stride of the representation.
pub const STRIDE: usize = 16;
/// Prior positive probability used to initialise the classifier bias.
pub const PRIOR_PROB: f64 = 0.01;

/// Channel widths of the four strided convolutions followed by the width of
/// the final stride-1 convolution, which is also the feature dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub widths: [usize; 5],
}

impl Default for Arch {
    fn default() -> Self {
        Arch { widths: [16, 32, 48, 64, 128] }
    }
}

/// `(name, in, out, stride)` for every representation convolution.
pub(crate) fn conv_layout(arch: &Arch) -> Vec<(String, usize, usize, usize)> {
    let w = arch.widths;
    vec![
        ("representation.conv1".to_string(), 3, w[0], 2),
        ("representation.conv2".to_string(), w[0], w[1], 2),
        ("representation.conv3".to_string(), w[1], w[2], 2),
        ("representation.conv4".to_string(), w[2], w[3], 2),
        ("representation.conv5".to_string(), w[3], w[4], 1),
    ]
}

/// Named parameter arrays of the detector. Names are stable across
/// save/load, which fusion and freezing rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams<F> {
    pub num_classes: usize,
    pub tensors: BTreeMap<String, Array<F>>,
}

pub fn prior_bias(prior: f64) -> f64 {
    -((1.0 - prior) / prior).ln()
}

fn gaussian<F: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Array<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::lit(z * std)
        })
        .collect();
    Array::from_vec(shape, data)
}

impl<F: Scalar> DetectorParams<F> {
    /// He-initialised representation plus a fresh head.
    pub fn init(arch: &Arch, num_classes: usize, rng: &mut Rng) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, cin, cout, _) in conv_layout(arch) {
            let fan_in = cin * 9;
            tensors.insert(format!("{name}.weight"), gaussian(&[cout, cin, 3, 3], (2.0 / fan_in as f64).sqrt(), rng));
            tensors.insert(format!("{name}.bias"), Array::zeros(&[cout]));
        }
        let mut p = DetectorParams { num_classes, tensors };
        p.init_head(num_classes, rng);
        p
    }

    fn init_head(&mut self, num_classes: usize, rng: &mut Rng) {
        let c = self.feature_dim();
        self.tensors.insert(CLASSIFIER_WEIGHT.into(), gaussian(&[num_classes, c], 0.01, rng));
        self.tensors.insert(
            CLASSIFIER_BIAS.into(),
            Array::from_vec(&[num_classes], vec![F::lit(prior_bias(PRIOR_PROB)); num_classes]),
        );
        self.tensors.insert(REGRESSOR_WEIGHT.into(), gaussian(&[4, c], 0.01, rng));
        self.tensors.insert(REGRESSOR_BIAS.into(), Array::zeros(&[4]));
        self.num_classes = num_classes;
    }

    pub fn arch(&self) -> Arch {
        let width = |name: &str| self.tensors.get(name).map_or(0, |a| a.shape[0]);
        Arch {
            widths: [
                width("representation.conv1.weight"),
                width("representation.conv2.weight"),
                width("representation.conv3.weight"),
                width("representation.conv4.weight"),
                width("representation.conv5.weight"),
            ],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.tensors.get("representation.conv5.weight").map_or(0, |a| a.shape[0])
    }

    pub fn get(&self, name: &str) -> &Array<F> {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Structural validation: every expected tensor exists with the right shape.
    pub fn validate(&self) -> Result<()> {
        let arch = self.arch();
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        for (name, cin, cout, _) in conv_layout(&arch) {
            expected.push((format!("{name}.weight"), vec![cout, cin, 3, 3]));
            expected.push((format!("{name}.bias"), vec![cout]));
        }
        let c = arch.widths[4];
        let k = self.num_classes;
        expected.push((CLASSIFIER_WEIGHT.into(), vec![k, c]));
        expected.push((CLASSIFIER_BIAS.into(), vec![k]));
        expected.push((REGRESSOR_WEIGHT.into(), vec![4, c]));
        expected.push((REGRESSOR_BIAS.into(), vec![4]));
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            match self.tensors.get(&name) {
                None => return Err(Error::Shape(format!("missing tensor {name}"))),
                Some(a) if a.shape != shape => {
                    return Err(Error::Shape(format!("{name} has shape {:?}, expected {shape:?}", a.shape)))
                }
                Some(a) if a.data.len() != shape.iter().product::<usize>() => {
                    return Err(Error::Shape(format!("{name} data length does not match its shape")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values of tensors whose name starts with `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, a) in self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in &a.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &a.data {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn representation_digest(&self) -> String {
        self.digest(REPRESENTATION)
    }

    pub fn same_structure(&self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::StructureMismatch("different tensor counts".into()));
        }
        for ((na, a), (nb, b)) in self.tensors.iter().zip(&other.tensors) {
            if na != nb || a.shape != b.shape {
                return Err(Error::StructureMismatch(format!("{na} {:?} vs {nb} {:?}", a.shape, b.shape)));
            }
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> DetectorParams<G> {
        DetectorParams {
            num_classes: self.num_classes,
            tensors: self
                .tensors
                .iter()
                .map(|(n, a)| {
                    (n.clone(), Array { shape: a.shape.clone(), data: a.data.iter().map(|v| G::lit(v.as_f64())).collect() })
                })
                .collect(),
        }
    }
}

/// Copy the representation bit-exactly and draw a fresh classifier and
/// regressor for `new_num_classes` classes.
pub fn reinit_head<F: Scalar>(params: &DetectorParams<F>, new_num_classes: usize, rng: &mut Rng) -> Result<DetectorParams<F>> {
    if new_num_classes == 0 {
        return Err(Error::InvalidArgument("new_num_classes must be >= 1".into()));
    }
    let mut out = DetectorParams {
        num_classes: params.num_classes,
        tensors: params
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with(REPRESENTATION))
            .map(|(n, a)| (n.clone(), a.clone()))
            .collect(),
    };
    out.init_head(new_num_classes, rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn prior_bias_value() {
        assert!((prior_bias(0.01) - (-4.59511985013459)).abs() < 1e-12);
    }

    #[test]
    fn reinit_keeps_representation_bits() {
        let mut rng = rng_for(0, &[]);
        let p: DetectorParams<f32> = DetectorParams::init(&Arch::default(), 5, &mut rng);
        let q = reinit_head(&p, 5, &mut rng).unwrap();
        assert_eq!(p.representation_digest(), q.representation_digest());
        assert_ne!(p.get(CLASSIFIER_WEIGHT), q.get(CLASSIFIER_WEIGHT));
        let r = reinit_head(&p, 3, &mut rng).unwrap();
        assert_eq!(r.get(CLASSIFIER_WEIGHT).shape, vec![3, p.feature_dim()]);
        assert_eq!(r.num_classes, 3);
        r.validate().unwrap();
        assert!(reinit_head(&p, 0, &mut rng).is_err());
    }

    #[test]
    fn head_init_statistics() {
        let mut rng = rng_for(1, &[]);
        let p: DetectorParams<f64> = DetectorParams::init(&Arch::default(), 337, &mut rng);
        let w = &p.get(CLASSIFIER_WEIGHT).data;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - 0.01).abs() < 0.0005, "std {std}");
        assert!(p.get(CLASSIFIER_BIAS).data.iter().all(|&b| (b - prior_bias(0.01)).abs() < 1e-12));
    }
}
