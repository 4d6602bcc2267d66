//! Fully connected network with a hand-written reverse pass.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (width × fan-in, row-major) followed by the bias.

use std::fmt;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
            Self::Identity => z,
        }
    }

    /// Derivative at pre-activation `z` with output `a`.
    #[inline]
    fn slope(self, z: f64, a: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - a * a,
            Self::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub inputs: usize,
    /// Hidden layers then the output layer.
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(inputs: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if inputs == 0 || layers.is_empty() || layers.iter().any(|l| l.width == 0) {
            return Err(Error::InvalidConfig(
                "architecture needs inputs, at least one layer and nonzero widths".into(),
            ));
        }
        Ok(Self { inputs, layers })
    }

    /// `hidden` layers followed by an identity output layer of width `outputs`.
    pub fn mlp(inputs: usize, hidden: &[(usize, Activation)], outputs: usize) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&(width, activation)| LayerSpec { width, activation })
            .collect();
        layers.push(LayerSpec {
            width: outputs,
            activation: Activation::Identity,
        });
        Self::new(inputs, layers)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    pub fn param_count(&self) -> usize {
        self.shapes().map(|s| (s.fan_in + 1) * s.width).sum()
    }

    /// Compact form such as `4-128relu-128tanh-1identity`.
    pub fn describe(&self) -> String {
        let mut s = self.inputs.to_string();
        for l in &self.layers {
            s.push_str(&format!("-{}{}", l.width, l.activation.tag()));
        }
        s
    }

    fn shapes(&self) -> impl Iterator<Item = Shape> + '_ {
        let mut fan_in = self.inputs;
        let mut offset = 0;
        self.layers.iter().map(move |l| {
            let s = Shape {
                fan_in,
                width: l.width,
                activation: l.activation,
                offset,
            };
            offset += (fan_in + 1) * l.width;
            fan_in = l.width;
            s
        })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

#[derive(Clone, Copy)]
struct Shape {
    fan_in: usize,
    width: usize,
    activation: Activation,
    offset: usize,
}

impl Shape {
    fn weights<'a>(&self, xi: &'a [f64]) -> ArrayView2<'a, f64> {
        let n = self.width * self.fan_in;
        ArrayView2::from_shape((self.width, self.fan_in), &xi[self.offset..self.offset + n])
            .expect("layer shape")
    }

    fn bias<'a>(&self, xi: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.width * self.fan_in;
        ArrayView1::from(&xi[start..start + self.width])
    }
}

/// Activations kept by a forward pass for the reverse pass.
#[derive(Clone, Debug)]
pub struct Tape {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl Tape {
    /// Network outputs, batch × outputs.
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("at least one layer")
    }
}

/// ξ together with the architecture it parameterizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    architecture: Architecture,
    xi: Vec<f64>,
}

impl NetworkParams {
    pub fn new(architecture: Architecture, xi: Vec<f64>) -> Result<Self> {
        let expected = architecture.param_count();
        if xi.len() != expected {
            return Err(Error::ParamMismatch {
                expected,
                actual: xi.len(),
            });
        }
        Ok(Self { architecture, xi })
    }

    pub fn zeros(architecture: Architecture) -> Self {
        let xi = vec![0.0; architecture.param_count()];
        Self { architecture, xi }
    }

    /// Weights and biases uniform on ±1/√fan-in.
    pub fn init(architecture: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xi = vec![0.0; architecture.param_count()];
        for s in architecture.shapes() {
            let bound = 1.0 / (s.fan_in as f64).sqrt();
            for v in &mut xi[s.offset..s.offset + (s.fan_in + 1) * s.width] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Self { architecture, xi }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn xi_mut(&mut self) -> &mut [f64] {
        &mut self.xi
    }

    pub fn into_xi(self) -> Vec<f64> {
        self.xi
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Outputs for a batch of rows, batch × outputs.
    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut a = input.to_owned();
        for s in self.architecture.shapes() {
            a = self.affine(&s, a.view());
            let act = s.activation;
            if act != Activation::Identity {
                a.mapv_inplace(|z| act.apply(z));
            }
        }
        a
    }

    pub fn forward_tape(&self, input: ArrayView2<f64>) -> Tape {
        let mut pre = Vec::with_capacity(self.architecture.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.architecture.layers.len());
        for s in self.architecture.shapes() {
            let z = self.affine(&s, post.last().map_or(input, |a| a.view()));
            let act = s.activation;
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.mapv(|v| act.apply(v))
            };
            pre.push(z);
            post.push(a);
        }
        Tape {
            input: input.to_owned(),
            pre,
            post,
        }
    }

    fn affine(&self, s: &Shape, a: ArrayView2<f64>) -> Array2<f64> {
        let mut z = Array2::zeros((a.nrows(), s.width));
        z.assign(
            &s.bias(&self.xi)
                .broadcast((a.nrows(), s.width))
                .expect("bias broadcast"),
        );
        general_mat_mul(1.0, &a, &s.weights(&self.xi).t(), 1.0, &mut z);
        z
    }

    /// Adds Σ_b Σ_o seed[b, o] ∂N_o(row b)/∂ξ to `grad`.
    pub fn backward(&self, tape: &Tape, seed: ArrayView2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.xi.len());
        let shapes: Vec<Shape> = self.architecture.shapes().collect();
        let last = shapes.len() - 1;
        let mut delta = seed.to_owned();
        scale_by_slope(
            &mut delta,
            &tape.pre[last],
            &tape.post[last],
            shapes[last].activation,
        );
        for l in (0..=last).rev() {
            let s = shapes[l];
            let a_prev = if l == 0 {
                tape.input.view()
            } else {
                tape.post[l - 1].view()
            };
            let nw = s.width * s.fan_in;
            let (gw, gb) = grad[s.offset..s.offset + nw + s.width].split_at_mut(nw);
            let mut gw = ArrayViewMut2::from_shape((s.width, s.fan_in), gw).expect("layer shape");
            general_mat_mul(1.0, &delta.t(), &a_prev, 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(gb);
            gb += &delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&s.weights(&self.xi));
                scale_by_slope(
                    &mut next,
                    &tape.pre[l - 1],
                    &tape.post[l - 1],
                    shapes[l - 1].activation,
                );
                delta = next;
            }
        }
    }
}

fn scale_by_slope(delta: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>, act: Activation) {
    if act == Activation::Identity {
        return;
    }
    Zip::from(delta)
        .and(z)
        .and(a)
        .for_each(|d, &z, &a| *d *= act.slope(z, a));
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn arch() -> Architecture {
        Architecture::mlp(3, &[(5, Activation::Tanh), (4, Activation::Relu)], 2).unwrap()
    }

    #[test]
    fn parameter_count_and_description() {
        let a = arch();
        assert_eq!(a.param_count(), 4 * 5 + 6 * 4 + 5 * 2);
        assert_eq!(a.describe(), "3-5tanh-4relu-2identity");
        assert!(NetworkParams::new(a.clone(), vec![0.0; 3]).is_err());
        assert!(Architecture::new(0, vec![]).is_err());
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let a = arch();
        let p = NetworkParams::init(a.clone(), 4);
        assert_eq!(p, NetworkParams::init(a.clone(), 4));
        assert_ne!(p, NetworkParams::init(a, 5));
        assert!(p.xi()[..20].iter().all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
    }

    #[test]
    fn single_layer_is_affine() {
        let a = Architecture::mlp(2, &[], 1).unwrap();
        let p = NetworkParams::new(a, vec![2.0, -1.0, 0.5]).unwrap();
        let out = p.forward(array![[1.0, 3.0], [0.0, 0.0]].view());
        assert_eq!(out, array![[-0.5], [0.5]]);
    }

    #[test]
    fn tape_matches_plain_forward() {
        let p = NetworkParams::init(arch(), 1);
        let x = array![[0.1, -0.2, 0.3], [1.0, 0.5, -2.0]];
        assert_eq!(p.forward(x.view()), *p.forward_tape(x.view()).output());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut p = NetworkParams::init(arch(), 2);
        let x = array![[0.1, -0.2, 0.3], [1.0, 0.5, -2.0], [-0.7, 0.2, 0.9]];
        let seed = array![[1.0, -0.5], [0.3, 2.0], [-1.2, 0.4]];
        let tape = p.forward_tape(x.view());
        let mut grad = vec![0.0; p.len()];
        p.backward(&tape, seed.view(), &mut grad);
        let h = 1e-6;
        for c in 0..p.len() {
            let base = p.xi()[c];
            p.xi_mut()[c] = base + h;
            let up = (&p.forward(x.view()) * &seed).sum();
            p.xi_mut()[c] = base - h;
            let down = (&p.forward(x.view()) * &seed).sum();
            p.xi_mut()[c] = base;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grad[c]).abs() < 1e-7 * (1.0 + fd.abs()),
                "coordinate {c}: {fd} vs {}",
                grad[c]
            );
        }
    }

    #[test]
    fn backward_accumulates() {
        let p = NetworkParams::init(arch(), 3);
        let x = array![[0.1, -0.2, 0.3]];
        let seed = array![[1.0, 1.0]];
        let tape = p.forward_tape(x.view());
        let mut once = vec![0.0; p.len()];
        p.backward(&tape, seed.view(), &mut once);
        let mut twice = once.clone();
        p.backward(&tape, seed.view(), &mut twice);
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_tags_round_trip() {
        for a in [Activation::Relu, Activation::Tanh, Activation::Identity] {
            assert_eq!(Activation::parse(a.tag()).unwrap(), a);
        }
        assert!(Activation::parse("sigmoid").is_err());
    }
}
