//! Dense + convolutional surrogate for the forward map: one fully connected
//! layer reshaped to a 16×16 plane, then a stack of 3×3 same-padded
//! convolutions. Parameters live in one flat vector so the optimizer and the
//! model file can treat them uniformly.

mod adam;
mod io;
mod train;

pub use adam::AdamState;
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{dataset_mse, train, write_loss_csv, EpochRecord, TrainConfig, Trainer};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Side of the square output plane.
pub const SIDE: usize = 16;
/// Entries in one plane.
pub const PLANE: usize = SIDE * SIDE;
const PAD: usize = SIDE + 2;
const PADDED: usize = PAD * PAD;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("forward cache does not belong to this network")]
    CacheMismatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, lr: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer sizes of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden channel count of the inner convolutions.
    pub channels: usize,
    pub conv_count: usize,
    /// Apply ReLU after the final convolution as well.
    pub final_relu: bool,
}

impl Architecture {
    pub fn new(input_dim: usize, channels: usize) -> Self {
        Architecture {
            input_dim,
            channels,
            conv_count: 4,
            final_relu: false,
        }
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.input_dim == 0 || self.channels == 0 || self.conv_count == 0 {
            return Err(SurrogateError::InvalidConfig(format!(
                "input_dim, channels and conv_count must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(in_ch, out_ch)` of convolution `l`.
    pub fn conv_channels(&self, l: usize) -> (usize, usize) {
        let cin = if l == 0 { 1 } else { self.channels };
        let cout = if l + 1 == self.conv_count { 1 } else { self.channels };
        (cin, cout)
    }

    pub fn layout(&self) -> Layout {
        let mut off = 0;
        let dense_w = off..off + PLANE * self.input_dim;
        off = dense_w.end;
        let dense_b = off..off + PLANE;
        off = dense_b.end;
        let mut convs = Vec::with_capacity(self.conv_count);
        for l in 0..self.conv_count {
            let (cin, cout) = self.conv_channels(l);
            let w = off..off + cout * cin * 9;
            off = w.end;
            let b = off..off + cout;
            off = b.end;
            convs.push(ConvSlices { cin, cout, w, b });
        }
        Layout {
            dense_w,
            dense_b,
            convs,
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSlices {
    pub cin: usize,
    pub cout: usize,
    /// Kernel `[out][in][dy][dx]`.
    pub w: std::ops::Range<usize>,
    pub b: std::ops::Range<usize>,
}

/// Offsets of every parameter group in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// Dense weights `[256][input_dim]`.
    pub dense_w: std::ops::Range<usize>,
    pub dense_b: std::ops::Range<usize>,
    pub convs: Vec<ConvSlices>,
    pub total: usize,
}

impl Layout {
    /// Named parameter groups, in storage order.
    pub fn groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut g = vec![
            ("dense.w".to_string(), self.dense_w.clone()),
            ("dense.b".to_string(), self.dense_b.clone()),
        ];
        for (l, c) in self.convs.iter().enumerate() {
            g.push((format!("conv{l}.w"), c.w.clone()));
            g.push((format!("conv{l}.b"), c.b.clone()));
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateNet {
    pub arch: Architecture,
    layout: Layout,
    pub params: Vec<f64>,
    pub scaling: Scaling,
}

/// Fixed affine maps around the trained core: inputs are centred per entry
/// and divided by one scalar before the dense layer; outputs are mapped back
/// the same way. Empty mean vectors stand for zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub input_mean: Vec<f64>,
    pub input_std: f64,
    pub output_mean: Vec<f64>,
    pub output_std: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling {
            input_mean: Vec::new(),
            input_std: 1.0,
            output_mean: Vec::new(),
            output_std: 1.0,
        }
    }
}

/// Per-entry mean and the RMS deviation from it over all entries.
fn centre_and_spread(rows: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let Some(first) = rows.first() else {
        return (Vec::new(), 1.0);
    };
    let n = rows.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let count = (rows.len() * first.len()).max(1) as f64;
    let var = rows
        .iter()
        .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)))
        .sum::<f64>()
        / count;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

fn standardize(x: &[f64], mean: &[f64], std: f64, out: &mut Vec<f64>) {
    out.clear();
    if mean.is_empty() {
        out.extend(x.iter().map(|v| v / std));
    } else {
        out.extend(x.iter().zip(mean).map(|(v, m)| (v - m) / std));
    }
}

impl Scaling {
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Self {
        let (input_mean, input_std) = centre_and_spread(inputs);
        let (output_mean, output_std) = centre_and_spread(targets);
        Scaling {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }

    /// One mean and one spread per side, shared by all entries.
    pub fn fit_scalar(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Self {
        let side = |rows: &[Vec<f64>]| {
            let flat: Vec<Vec<f64>> = rows.iter().flatten().map(|&v| vec![v]).collect();
            let (m, s) = centre_and_spread(&flat);
            (vec![m.first().copied().unwrap_or(0.0); rows.first().map_or(0, Vec::len)], s)
        };
        let (input_mean, input_std) = side(inputs);
        let (output_mean, output_std) = side(targets);
        Scaling {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Scaling::default()
    }

    pub fn validate(&self, input_dim: usize) -> Result<(), SurrogateError> {
        let finite = self
            .input_mean
            .iter()
            .chain(&self.output_mean)
            .chain([&self.input_std, &self.output_std])
            .all(|v| v.is_finite());
        let ok = finite
            && self.input_std > 0.0
            && self.output_std > 0.0
            && (self.input_mean.is_empty() || self.input_mean.len() == input_dim)
            && (self.output_mean.is_empty() || self.output_mean.len() == PLANE);
        if ok {
            Ok(())
        } else {
            Err(SurrogateError::InvalidConfig(format!(
                "bad scaling (input std {}, output std {}, {} input and {} output means)",
                self.input_std,
                self.output_std,
                self.input_mean.len(),
                self.output_mean.len()
            )))
        }
    }

    pub fn normalize_input(&self, x: &[f64], out: &mut Vec<f64>) {
        standardize(x, &self.input_mean, self.input_std, out);
    }

    pub fn normalize_target(&self, t: &[f64], out: &mut Vec<f64>) {
        standardize(t, &self.output_mean, self.output_std, out);
    }

    pub fn denormalize_output(&self, out: &mut [f64]) {
        for (k, v) in out.iter_mut().enumerate() {
            *v = *v * self.output_std + self.output_mean.get(k).copied().unwrap_or(0.0);
        }
    }
}

/// Activations kept by [`SurrogateNet::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Output of the dense layer, then of each convolution.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache always holds the dense activation")
    }

    /// Dense-layer output followed by each convolution's output.
    pub fn activations(&self) -> &[Vec<f64>] {
        &self.acts
    }
}

impl SurrogateNet {
    /// All parameters zero.
    pub fn zeros(arch: Architecture) -> Result<Self, SurrogateError> {
        arch.validate()?;
        let layout = arch.layout();
        Ok(SurrogateNet {
            arch,
            params: vec![0.0; layout.total],
            layout,
            scaling: Scaling::default(),
        })
    }

    /// He-normal weights (`std = √(2/fan_in)`), zero biases.
    pub fn he_init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, SurrogateError> {
        let mut net = SurrogateNet::zeros(arch)?;
        let fill = |params: &mut [f64], fan_in: usize, rng: &mut R| {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            params.iter_mut().for_each(|p| *p = n.sample(rng));
        };
        let layout = net.layout.clone();
        fill(&mut net.params[layout.dense_w.clone()], arch.input_dim, rng);
        for c in &layout.convs {
            fill(&mut net.params[c.w.clone()], c.cin * 9, rng);
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, SurrogateError> {
        let mut net = SurrogateNet::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(SurrogateError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn relu_after(&self, conv: usize) -> bool {
        conv + 1 < self.arch.conv_count || self.arch.final_relu
    }

    /// 16×16 prediction in physical units, row-major.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        if self.scaling.is_identity() {
            return self.forward_raw(input);
        }
        if input.len() != self.arch.input_dim {
            return Err(SurrogateError::Shape {
                expected: self.arch.input_dim,
                got: input.len(),
            });
        }
        let mut x = Vec::with_capacity(input.len());
        self.scaling.normalize_input(input, &mut x);
        let mut out = self.forward_raw(&x)?;
        self.scaling.denormalize_output(&mut out);
        Ok(out)
    }

    /// Output of the core network for an already standardized input.
    pub fn forward_raw(&self, input: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        Ok(self.forward_cached(input)?.acts.pop().expect("non-empty"))
    }

    /// Core forward pass keeping activations; no scaling is applied.
    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, SurrogateError> {
        if input.len() != self.arch.input_dim {
            return Err(SurrogateError::Shape {
                expected: self.arch.input_dim,
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFiniteInput);
        }
        let p = &self.params;
        let w = &p[self.layout.dense_w.clone()];
        let b = &p[self.layout.dense_b.clone()];
        let n = self.arch.input_dim;
        let dense: Vec<f64> = (0..PLANE)
            .map(|o| (b[o] + crate::sparse::dot(&w[o * n..(o + 1) * n], input)).max(0.0))
            .collect();
        let mut acts = Vec::with_capacity(self.arch.conv_count + 1);
        acts.push(dense);
        let mut pad = Vec::new();
        for (l, c) in self.layout.convs.iter().enumerate() {
            let mut out = vec![0.0; c.cout * PLANE];
            conv_forward(&p[c.w.clone()], &p[c.b.clone()], c.cin, c.cout, acts.last().unwrap(), &mut out, &mut pad);
            if self.relu_after(l) {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        Ok(ForwardCache {
            input: input.to_vec(),
            acts,
        })
    }

    /// Accumulates `∂(Σ grad_out · output)/∂params` into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut [f64],
    ) -> Result<(), SurrogateError> {
        if cache.acts.len() != self.arch.conv_count + 1 || cache.input.len() != self.arch.input_dim {
            return Err(SurrogateError::CacheMismatch);
        }
        if grad_out.len() != PLANE {
            return Err(SurrogateError::Shape {
                expected: PLANE,
                got: grad_out.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(SurrogateError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let p = &self.params;
        let mut g = grad_out.to_vec();
        let mut pad = Vec::new();
        for l in (0..self.arch.conv_count).rev() {
            let c = &self.layout.convs[l];
            let out = &cache.acts[l + 1];
            if self.relu_after(l) {
                g.iter_mut().zip(out).for_each(|(gv, &a)| {
                    if a <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            let mut gin = vec![0.0; c.cin * PLANE];
            let (lo, hi) = grads.split_at_mut(c.b.start);
            conv_backward(
                &p[c.w.clone()],
                c.cin,
                c.cout,
                &cache.acts[l],
                &g,
                &mut lo[c.w.clone()],
                &mut hi[..c.cout],
                &mut gin,
                &mut pad,
            );
            g = gin;
        }
        let dense = &cache.acts[0];
        let n = self.arch.input_dim;
        for o in 0..PLANE {
            if dense[o] <= 0.0 {
                continue;
            }
            let go = g[o];
            grads[self.layout.dense_b.start + o] += go;
            let row = &mut grads[self.layout.dense_w.start + o * n..self.layout.dense_w.start + (o + 1) * n];
            row.iter_mut().zip(&cache.input).for_each(|(r, &x)| *r += go * x);
        }
        Ok(())
    }

    /// Gradient of `Σ grad_out · output` for one input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(cache, grad_out, &mut grads)?;
        Ok(grads)
    }
}

fn fill_padded(input: &[f64], cin: usize, pad: &mut Vec<f64>) {
    pad.clear();
    pad.resize(cin * PADDED, 0.0);
    for i in 0..cin {
        for y in 0..SIDE {
            let src = &input[i * PLANE + y * SIDE..i * PLANE + (y + 1) * SIDE];
            let start = i * PADDED + (y + 1) * PAD + 1;
            pad[start..start + SIDE].copy_from_slice(src);
        }
    }
}

fn conv_forward(w: &[f64], b: &[f64], cin: usize, cout: usize, input: &[f64], out: &mut [f64], pad: &mut Vec<f64>) {
    fill_padded(input, cin, pad);
    for o in 0..cout {
        let dst = &mut out[o * PLANE..(o + 1) * PLANE];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let k = &w[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            let plane = &pad[i * PADDED..(i + 1) * PADDED];
            for y in 0..SIDE {
                let row: &mut [f64; SIDE] = (&mut dst[y * SIDE..(y + 1) * SIDE]).try_into().unwrap();
                for dy in 0..3 {
                    let base = (y + dy) * PAD;
                    for dx in 0..3 {
                        let kv = k[dy * 3 + dx];
                        let src: &[f64; SIDE] = plane[base + dx..base + dx + SIDE].try_into().unwrap();
                        for x in 0..SIDE {
                            row[x] += kv * src[x];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &[f64],
    cin: usize,
    cout: usize,
    input: &[f64],
    gout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    gin: &mut [f64],
    pad: &mut Vec<f64>,
) {
    fill_padded(input, cin, pad);
    let mut gpad = vec![0.0; cin * PADDED];
    for o in 0..cout {
        let go = &gout[o * PLANE..(o + 1) * PLANE];
        gb[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let kidx = (o * cin + i) * 9;
            let plane = &pad[i * PADDED..(i + 1) * PADDED];
            let gplane = &mut gpad[i * PADDED..(i + 1) * PADDED];
            for dy in 0..3 {
                for dx in 0..3 {
                    let kv = w[kidx + dy * 3 + dx];
                    let mut acc = 0.0;
                    for y in 0..SIDE {
                        let base = (y + dy) * PAD + dx;
                        let g: &[f64; SIDE] = go[y * SIDE..(y + 1) * SIDE].try_into().unwrap();
                        let src: &[f64; SIDE] = plane[base..base + SIDE].try_into().unwrap();
                        let dst: &mut [f64; SIDE] = (&mut gplane[base..base + SIDE]).try_into().unwrap();
                        for x in 0..SIDE {
                            acc += g[x] * src[x];
                            dst[x] += kv * g[x];
                        }
                    }
                    gw[kidx + dy * 3 + dx] += acc;
                }
            }
        }
    }
    for i in 0..cin {
        for y in 0..SIDE {
            let start = i * PADDED + (y + 1) * PAD + 1;
            gin[i * PLANE + y * SIDE..i * PLANE + (y + 1) * SIDE].copy_from_slice(&gpad[start..start + SIDE]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, arch: Architecture) -> SurrogateNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = SurrogateNet::he_init(arch, &mut rng).unwrap();
        // nonzero biases so every bias gradient path is exercised
        let layout = net.layout().clone();
        for (_, r) in layout.groups().into_iter().filter(|(n, _)| n.ends_with(".b")) {
            for p in &mut net.params[r] {
                *p = rng.random_range(-0.1..0.2);
            }
        }
        net
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = SurrogateNet::zeros(Architecture::new(7, 3)).unwrap();
        assert!(net.forward(&[1.0; 7]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernels_pass_dense_bias() {
        let arch = Architecture::new(5, 3);
        let mut net = SurrogateNet::zeros(arch).unwrap();
        let layout = net.layout().clone();
        let b = 0.37;
        net.params[layout.dense_b.clone()].iter_mut().for_each(|v| *v = b);
        for c in &layout.convs {
            for o in 0..c.cout {
                for i in 0..c.cin {
                    if i == o || c.cin == 1 || (c.cout == 1 && i == 0) {
                        net.params[c.w.start + (o * c.cin + i) * 9 + 4] = 1.0;
                    }
                }
            }
        }
        let out = net.forward(&[0.5, -1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(out.iter().all(|&v| (v - b).abs() < 1e-15));
    }

    #[test]
    fn shape_and_finiteness() {
        let net = random_net(1, Architecture::new(20, 4));
        let out = net.forward(&[0.3; 20]).unwrap();
        assert_eq!(out.len(), PLANE);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(matches!(net.forward(&[0.3; 19]), Err(SurrogateError::Shape { .. })));
        assert!(matches!(net.forward(&[f64::NAN; 20]), Err(SurrogateError::NonFiniteInput)));
    }

    #[test]
    fn convolution_of_impulse_reproduces_kernel() {
        let kernel: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let mut input = vec![0.0; PLANE];
        let mut pad = Vec::new();
        for (iy, ix) in [(5usize, 7usize), (1, 1), (14, 9)] {
            input.iter_mut().for_each(|v| *v = 0.0);
            input[iy * SIDE + ix] = 1.0;
            let mut out = vec![0.0; PLANE];
            conv_forward(&kernel, &[0.0], 1, 1, &input, &mut out, &mut pad);
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let (dy, dx) = (iy as i64 - y as i64 + 1, ix as i64 - x as i64 + 1);
                    let want = if (0..3).contains(&dy) && (0..3).contains(&dx) {
                        kernel[(dy * 3 + dx) as usize]
                    } else {
                        0.0
                    };
                    assert_eq!(out[y * SIDE + x], want);
                }
            }
        }
        // corner impulse: only the taps that land inside the plane survive
        input.iter_mut().for_each(|v| *v = 0.0);
        input[0] = 1.0;
        let mut out = vec![0.0; PLANE];
        conv_forward(&kernel, &[0.0], 1, 1, &input, &mut out, &mut pad);
        assert_eq!(out.iter().sum::<f64>(), 1.0 + 2.0 + 4.0 + 5.0);
    }

    fn relu_mask(net: &SurrogateNet, input: &[f64]) -> Vec<bool> {
        let cache = net.forward_cached(input).unwrap();
        let relu_layers = cache.acts.len() - usize::from(!net.arch.final_relu);
        cache.acts[..relu_layers].iter().flatten().map(|&a| a > 0.0).collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (mut checked, mut kinked) = (0usize, 0usize);
        for seed in 0..10u64 {
            let arch = Architecture::new(20, 4);
            let mut net = random_net(100 + seed, arch);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r: Vec<f64> = (0..PLANE).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cache = net.forward_cached(&input).unwrap();
            let grads = net.backward(&cache, &r).unwrap();
            let obj = |n: &SurrogateNet| crate::sparse::dot(&n.forward(&input).unwrap(), &r);
            let h = 1e-5;
            for (name, range) in net.layout().groups() {
                let mut group_checked = 0;
                for k in range.step_by(3) {
                    let orig = net.params[k];
                    net.params[k] = orig + h;
                    let up = obj(&net);
                    let mask_up = relu_mask(&net, &input);
                    net.params[k] = orig - h;
                    let down = obj(&net);
                    let mask_down = relu_mask(&net, &input);
                    net.params[k] = orig;
                    // a difference quotient straddling a ReLU kink does not
                    // approximate the derivative at either side
                    if mask_up != mask_down {
                        kinked += 1;
                        continue;
                    }
                    let fd = (up - down) / (2.0 * h);
                    let rel = (fd - grads[k]).abs() / fd.abs().max(grads[k].abs()).max(1e-6);
                    assert!(rel < 1e-4, "seed {seed} {name}[{k}]: fd {fd} vs {}", grads[k]);
                    group_checked += 1;
                }
                assert!(group_checked > 0, "seed {seed}: no usable entries in {name}");
                checked += group_checked;
            }
        }
        assert!(kinked * 100 < checked, "{kinked} kink crossings out of {checked}");
    }

    #[test]
    fn backward_is_linear_in_adjoint() {
        let net = random_net(3, Architecture::new(10, 3));
        let cache = net.forward_cached(&[0.2; 10]).unwrap();
        let zero = net.backward(&cache, &[0.0; PLANE]).unwrap();
        assert!(zero.iter().all(|&g| g == 0.0));
        let r: Vec<f64> = (0..PLANE).map(|i| (i as f64).sin()).collect();
        let r2: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let g1 = net.backward(&cache, &r).unwrap();
        let g2 = net.backward(&cache, &r2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn final_relu_flag() {
        let mut arch = Architecture::new(6, 2);
        arch.final_relu = true;
        let net = random_net(8, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(net.forward(&x).unwrap().iter().all(|&v| v >= 0.0));
        }
        arch.final_relu = false;
        let linear_tail = SurrogateNet::from_params(arch, net.params.clone()).unwrap();
        let any_negative = (0..20).any(|_| {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            linear_tail.forward(&x).unwrap().iter().any(|&v| v < 0.0)
        });
        assert!(any_negative);
    }

    #[test]
    fn he_init_statistics() {
        let arch = Architecture::new(40, 4);
        let net = SurrogateNet::he_init(arch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let w = &net.params[net.layout().dense_w.clone()];
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0 / 40.0f64).sqrt();
        assert!((sd - want).abs() / want < 0.2, "{sd} vs {want}");
        let bias = &net.params[net.layout().dense_b.clone()];
        assert!(bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = random_net(2, Architecture::new(12, 4));
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn conv_count_variants() {
        for nl in [1, 4, 6, 8] {
            let mut arch = Architecture::new(9, 3);
            arch.conv_count = nl;
            let net = random_net(nl as u64, arch);
            assert_eq!(net.layout().convs.len(), nl);
            assert_eq!(net.forward(&[0.1; 9]).unwrap().len(), PLANE);
        }
    }

    #[test]
    fn scaling_wraps_core_affinely() {
        let mut net = random_net(4, Architecture::new(5, 2));
        let x = [1.0, 2.0, 1.5, 1.0, 2.0];
        let mean_in = [1.5, 1.0, 0.0, 2.0, -1.0];
        let mean_out: Vec<f64> = (0..PLANE).map(|k| k as f64 * 0.01).collect();
        net.scaling = Scaling {
            input_mean: mean_in.to_vec(),
            input_std: 0.5,
            output_mean: mean_out.clone(),
            output_std: 4.0,
        };
        let z: Vec<f64> = x.iter().zip(&mean_in).map(|(v, m)| (v - m) / 0.5).collect();
        let raw = net.forward_raw(&z).unwrap();
        let out = net.forward(&x).unwrap();
        for ((o, r), m) in out.iter().zip(&raw).zip(&mean_out) {
            assert!((o - (4.0 * r + m)).abs() < 1e-14);
        }
        assert!(net.forward(&x[..4]).is_err());
        let fitted = Scaling::fit(&[vec![1.0, 3.0], vec![3.0, 3.0]], &[vec![5.0; PLANE]]);
        assert_eq!((fitted.input_mean, fitted.input_std), (vec![2.0, 3.0], 0.5f64.sqrt()));
        assert_eq!((fitted.output_mean, fitted.output_std), (vec![5.0; PLANE], 1.0));
        assert!(Scaling::default().is_identity());
        assert!(Scaling { input_mean: vec![0.0; 3], ..Scaling::default() }.validate(5).is_err());
    }
}
