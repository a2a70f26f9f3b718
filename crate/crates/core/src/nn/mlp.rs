//! Fully connected networks with an explicit gradient tape.
//!
//! Parameters live in one flat buffer, layer by layer: the weight block of
//! layer `l` is stored input-major (`w[i * n_out + o]` connects input `i` to
//! output `o`) and is followed by that layer's bias. Gradients use the same
//! layout so the optimizer can treat both as plain slices.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, RngState};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::Parse(format!("unknown activation {s:?}"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// How the scalar noise level enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    None,
    /// The noise level α is appended to the input vector.
    ConcatAlpha,
    /// Both α and the noise scale `√(1 − α²)` are appended. The second
    /// feature is smooth where the noise vanishes, which α is not.
    ConcatAlphaNoise,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::None => "none",
            Conditioning::ConcatAlpha => "concat-alpha",
            Conditioning::ConcatAlphaNoise => "concat-alpha-noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Conditioning::None),
            "concat-alpha" => Ok(Conditioning::ConcatAlpha),
            "concat-alpha-noise" => Ok(Conditioning::ConcatAlphaNoise),
            _ => Err(Error::Parse(format!("unknown conditioning {s:?}"))),
        }
    }

    fn extra_inputs(self) -> usize {
        match self {
            Conditioning::None => 0,
            Conditioning::ConcatAlpha => 1,
            Conditioning::ConcatAlphaNoise => 2,
        }
    }
}

#[derive(Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    conditioning: Conditioning,
    params: Vec<f64>,
    offsets: Vec<(usize, usize)>,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            activations: self.activations.clone(),
            conditioning: self.conditioning,
            params: self.params.clone(),
            offsets: self.offsets.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes
            && self.activations == other.activations
            && self.conditioning == other.conditioning
            && self.params == other.params
    }
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    model_id: u64,
    version: u64,
    batch: usize,
    rank1: bool,
    activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// True when the forward input was a single unbatched vector.
    pub fn is_rank1(&self) -> bool {
        self.rank1
    }
}

/// Parameter gradients in the model's flat layout plus the gradient with
/// respect to the network input (conditioning slot included).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Mlp {
    /// `sizes` runs from the data dimension through the hidden widths to the
    /// output width; the conditioning slot is added on top of `sizes[0]`.
    /// Weights start as `N(0, 1/fan_in)`, biases at zero.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        conditioning: Conditioning,
        rng: &mut RngState,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Invalid(format!("bad layer sizes {sizes:?}")));
        }
        let mut full = sizes.to_vec();
        full[0] += conditioning.extra_inputs();
        let n_layers = full.len() - 1;
        let activations: Vec<Activation> = (0..n_layers)
            .map(|l| if l + 1 == n_layers { output } else { hidden })
            .collect();
        let offsets = layer_offsets(&full);
        let total = offsets.last().map_or(0, |&(_, b)| b + full[n_layers]);
        let mut params = vec![0.0; total];
        for l in 0..n_layers {
            let (w, b) = offsets[l];
            let scale = (1.0 / full[l] as f64).sqrt();
            for p in &mut params[w..b] {
                *p = scale * rng.normal();
            }
        }
        Self::from_parts(full, activations, conditioning, params)
    }

    /// `sizes` here includes the conditioning slot in `sizes[0]`.
    pub fn from_parts(
        sizes: Vec<usize>,
        activations: Vec<Activation>,
        conditioning: Conditioning,
        params: Vec<f64>,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() + 1 != sizes.len() {
            return Err(Error::Invalid("layer sizes and activations disagree".into()));
        }
        if sizes[0] <= conditioning.extra_inputs() {
            return Err(Error::Invalid("input layer has no data slots".into()));
        }
        let offsets = layer_offsets(&sizes);
        let total = offsets.last().map_or(0, |&(_, b)| b + sizes[sizes.len() - 1]);
        if params.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            sizes,
            activations,
            conditioning,
            params,
            offsets,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    /// Data dimension, excluding the conditioning slot.
    pub fn input_dim(&self) -> usize {
        self.sizes[0] - self.conditioning.extra_inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight from input `i` to output `o` of layer `l`.
    pub fn weight(&self, l: usize, o: usize, i: usize) -> f64 {
        self.params[self.weight_index(l, o, i)]
    }

    pub fn weight_index(&self, l: usize, o: usize, i: usize) -> usize {
        self.offsets[l].0 + i * self.sizes[l + 1] + o
    }

    pub fn bias_index(&self, l: usize, o: usize) -> usize {
        self.offsets[l].1 + o
    }

    /// `(weight_offset, bias_offset)` of layer `l` in the flat buffer.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        self.offsets[l]
    }

    pub fn forward(
        &self,
        x: &DenseTensor,
        alpha: Option<&[f64]>,
    ) -> Result<(DenseTensor, Tape)> {
        let (rank1, batch, input) = self.assemble_input(x, alpha)?;
        let activations = self.run(input, batch);
        let out = activations.last().unwrap().clone();
        let y = self.shape_output(out, rank1, batch)?;
        let tape = Tape {
            model_id: self.id,
            version: self.version,
            batch,
            rank1,
            activations,
        };
        Ok((y, tape))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, x: &DenseTensor, alpha: Option<&[f64]>) -> Result<DenseTensor> {
        let (rank1, batch, input) = self.assemble_input(x, alpha)?;
        let mut a = input;
        for l in 0..self.num_layers() {
            a = self.layer_forward(l, &a, batch);
        }
        self.shape_output(a, rank1, batch)
    }

    pub fn backward(&self, tape: &Tape, dy: &DenseTensor) -> Result<Gradients> {
        if tape.model_id != self.id || tape.version != self.version {
            return Err(Error::StaleTape);
        }
        let out_dim = self.output_dim();
        let expected: Vec<usize> = if tape.rank1 {
            vec![out_dim]
        } else {
            vec![tape.batch, out_dim]
        };
        if dy.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                dy.shape(),
                expected
            )));
        }
        let batch = tape.batch;
        let n_layers = self.num_layers();
        let mut grads = vec![0.0; self.params.len()];

        let mut delta: Vec<f64> = dy.data().to_vec();
        let last = &tape.activations[n_layers];
        let act = self.activations[n_layers - 1];
        for (d, &y) in delta.iter_mut().zip(last) {
            *d *= act.slope_from_output(y);
        }

        for l in (0..n_layers).rev() {
            let n_in = self.sizes[l];
            let n_out = self.sizes[l + 1];
            let (w_off, b_off) = self.offsets[l];
            let a_in = &tape.activations[l];
            {
                let (gw, gb) = grads[w_off..b_off + n_out].split_at_mut(b_off - w_off);
                for b in 0..batch {
                    let drow = &delta[b * n_out..(b + 1) * n_out];
                    for (g, &d) in gb.iter_mut().zip(drow) {
                        *g += d;
                    }
                    let arow = &a_in[b * n_in..(b + 1) * n_in];
                    for (i, &ai) in arow.iter().enumerate() {
                        if ai != 0.0 {
                            axpy(&mut gw[i * n_out..(i + 1) * n_out], ai, drow);
                        }
                    }
                }
            }
            let w = &self.params[w_off..b_off];
            let mut prev = vec![0.0; batch * n_in];
            for b in 0..batch {
                let drow = &delta[b * n_out..(b + 1) * n_out];
                for i in 0..n_in {
                    prev[b * n_in + i] = dot(&w[i * n_out..(i + 1) * n_out], drow);
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                for (p, &y) in prev.iter_mut().zip(a_in) {
                    *p *= act.slope_from_output(y);
                }
            }
            delta = prev;
        }

        if grads.iter().chain(&delta).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradients"));
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    fn assemble_input(
        &self,
        x: &DenseTensor,
        alpha: Option<&[f64]>,
    ) -> Result<(bool, usize, Vec<f64>)> {
        let rank1 = x.shape().len() == 1;
        if x.shape().len() > 2 {
            return Err(Error::ShapeMismatch(format!("input rank {}", x.shape().len())));
        }
        let batch = x.rows();
        let d = x.cols();
        if d != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input dimension {d}, model expects {}",
                self.input_dim()
            )));
        }
        match (self.conditioning, alpha) {
            (Conditioning::None, None) => Ok((rank1, batch, x.data().to_vec())),
            (Conditioning::None, Some(_)) => {
                Err(Error::Invalid("model takes no conditioning input".into()))
            }
            (_, None) => Err(Error::Invalid("model needs a noise level input".into())),
            (cond, Some(alphas)) => {
                if alphas.len() != batch {
                    return Err(Error::ShapeMismatch(format!(
                        "{} noise levels for batch {batch}",
                        alphas.len()
                    )));
                }
                let mut input = Vec::with_capacity(batch * (d + cond.extra_inputs()));
                for (row, &a) in x.iter_rows().zip(alphas) {
                    if !(a > 0.0 && a < 1.0) {
                        return Err(Error::OutOfRange {
                            name: "alpha",
                            value: a,
                            range: "(0, 1)",
                        });
                    }
                    input.extend_from_slice(row);
                    input.push(a);
                    if cond == Conditioning::ConcatAlphaNoise {
                        input.push((1.0 - a * a).sqrt());
                    }
                }
                Ok((rank1, batch, input))
            }
        }
    }

    fn run(&self, input: Vec<f64>, batch: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(input);
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, acts.last().unwrap(), batch);
            acts.push(next);
        }
        acts
    }

    fn layer_forward(&self, l: usize, a: &[f64], batch: usize) -> Vec<f64> {
        let n_in = self.sizes[l];
        let n_out = self.sizes[l + 1];
        let (w_off, b_off) = self.offsets[l];
        let w = &self.params[w_off..b_off];
        let bias = &self.params[b_off..b_off + n_out];
        let act = self.activations[l];
        let mut z = vec![0.0; batch * n_out];
        for b in 0..batch {
            let zrow = &mut z[b * n_out..(b + 1) * n_out];
            zrow.copy_from_slice(bias);
            for (i, &ai) in a[b * n_in..(b + 1) * n_in].iter().enumerate() {
                if ai != 0.0 {
                    axpy(zrow, ai, &w[i * n_out..(i + 1) * n_out]);
                }
            }
            if act != Activation::Identity {
                for v in zrow.iter_mut() {
                    *v = act.apply(*v);
                }
            }
        }
        z
    }

    fn shape_output(&self, out: Vec<f64>, rank1: bool, batch: usize) -> Result<DenseTensor> {
        let shape = if rank1 {
            vec![self.output_dim()]
        } else {
            vec![batch, self.output_dim()]
        };
        DenseTensor::new(shape, out).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite("network output"),
            other => other,
        })
    }
}

fn layer_offsets(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut at = 0;
    for l in 0..sizes.len() - 1 {
        let w = at;
        let b = w + sizes[l] * sizes[l + 1];
        offsets.push((w, b));
        at = b + sizes[l + 1];
    }
    offsets
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
