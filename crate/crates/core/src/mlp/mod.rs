//! Fixed-architecture feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`; layer `l` occupies
//! `[weights (out × in, row-major) | biases (out)]`. Batches are row-major
//! `Array2<f64>` with one sample per row.

mod adam;
pub mod codec;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState, Direction};

use crate::error::{Error, Result};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `z` for `z >= 0`, `e^z - 1` otherwise.
    Elu,
    Tanh,
    Identity,
    /// Strictly positive output head; only valid on the last layer.
    Exp,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Exp => "exp",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            "exp" => Ok(Activation::Exp),
            other => Err(Error::Config(format!("unknown activation tag `{other}`"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Exp => z.exp(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
            Activation::Exp => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Checks that a layer list is non-empty, has positive dimensions, chains
/// and only uses the `Exp` head on the final layer.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if spec.activation == Activation::Exp && i + 1 != specs.len() {
            return Err(Error::Config(format!(
                "layer {i}: exp activation is only allowed on the output layer"
            )));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Config(format!(
                "layer {i} outputs {} features but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Hidden stack of `depth - 1` layers of `width` units plus a linear (or
/// exp) output layer.
pub fn stack(
    input: usize,
    width: usize,
    depth: usize,
    output: usize,
    hidden: Activation,
    head: Activation,
) -> Vec<LayerSpec> {
    let depth = depth.max(1);
    let mut specs = Vec::with_capacity(depth);
    let mut prev = input;
    for _ in 1..depth {
        specs.push(LayerSpec::new(prev, width, hidden));
        prev = width;
    }
    specs.push(LayerSpec::new(prev, output, head));
    specs
}

#[derive(Clone, Debug)]
pub struct MlpNetwork {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    stamp: u64,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl MlpNetwork {
    /// Draws every weight and bias of a layer with `f` inputs i.i.d. from
    /// `U[-1/sqrt(f), 1/sqrt(f)]`.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, spec) in specs.iter().enumerate() {
            let bound = 1.0 / (spec.in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::Config(format!("init bound: {e}")))?;
            let start = net.offsets[l];
            for p in &mut net.params[start..start + spec.param_count()] {
                *p = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let mut offsets = Vec::with_capacity(specs.len());
        let mut total = 0;
        for spec in specs {
            offsets.push(total);
            total += spec.param_count();
        }
        Ok(Self {
            layers: specs.to_vec(),
            params: vec![0.0; total],
            offsets,
            stamp: fresh_stamp(),
        })
    }

    pub fn from_params(specs: &[LayerSpec], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameters. Invalidates caches produced
    /// by earlier forward passes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.params
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let spec = &self.layers[layer];
        let start = self.offsets[layer];
        ArrayView2::from_shape(
            (spec.out_dim, spec.in_dim),
            &self.params[start..start + spec.out_dim * spec.in_dim],
        )
        .expect("layer slice matches its spec")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let spec = &self.layers[layer];
        let start = self.offsets[layer] + spec.out_dim * spec.in_dim;
        ArrayView1::from(&self.params[start..start + spec.out_dim])
    }

    /// Evaluates the network on a batch (one sample per row).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network input contains NaN or inf".into()));
        }
        let rows = x.nrows();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            let input = if l == 0 { x.view() } else { post[l - 1].view() };
            let mut z = Array2::<f64>::zeros((rows, spec.out_dim));
            general_mat_mul(1.0, &input, &self.weights(l).t(), 0.0, &mut z);
            z += &self.bias(l);
            let act = spec.activation;
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            post.push(a);
        }
        let y = post[post.len() - 1].clone();
        Ok((
            y,
            ForwardCache {
                stamp: self.stamp,
                input: x.to_owned(),
                pre,
                post,
            },
        ))
    }

    /// Reverse pass for the scalar `<upstream, y>`; returns the gradient
    /// with respect to every layer's pre-activation.
    pub fn backprop(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<Backprop> {
        self.backprop_impl(cache, upstream, true)
    }

    /// Like [`MlpNetwork::backprop`] but `upstream` is the gradient with
    /// respect to the last layer's pre-activation, skipping the output
    /// activation. With an `Exp` head this differentiates `ln y` exactly.
    pub fn backprop_from_pre_activation(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<Backprop> {
        self.backprop_impl(cache, upstream, false)
    }

    fn backprop_impl(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        through_output: bool,
    ) -> Result<Backprop> {
        self.check_cache(cache)?;
        let rows = cache.rows();
        if upstream.dim() != (rows, self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream is {:?}, expected {:?}",
                upstream.dim(),
                (rows, self.output_dim())
            )));
        }
        let n = self.layers.len();
        let mut deltas: Vec<Array2<f64>> = Vec::with_capacity(n);
        let last = &self.layers[n - 1];
        let mut delta = upstream.to_owned();
        if through_output {
            scale_by_derivative(
                &mut delta,
                last.activation,
                &cache.pre[n - 1],
                &cache.post[n - 1],
            );
        }
        deltas.push(delta);
        for l in (1..n).rev() {
            let upper = deltas.last().expect("at least one delta");
            let spec = &self.layers[l - 1];
            let mut below = Array2::<f64>::zeros((rows, spec.out_dim));
            general_mat_mul(1.0, upper, &self.weights(l), 0.0, &mut below);
            scale_by_derivative(
                &mut below,
                spec.activation,
                &cache.pre[l - 1],
                &cache.post[l - 1],
            );
            deltas.push(below);
        }
        deltas.reverse();
        Ok(Backprop {
            stamp: self.stamp,
            deltas,
        })
    }

    /// Exact gradient of `<upstream, y>` with respect to all parameters,
    /// summed over the batch.
    pub fn backward_params(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        let bp = self.backprop(cache, upstream)?;
        self.param_gradient(cache, &bp, None)
    }

    /// Exact gradient of `<upstream, y>` with respect to the input rows.
    pub fn grad_input(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        let bp = self.backprop(cache, upstream)?;
        self.input_gradient(&bp)
    }

    /// Parameter gradient from a finished reverse pass. With `row_weights`
    /// the contribution of row `i` is multiplied by `row_weights[i]`, which
    /// equals rescaling that row of the upstream vector.
    pub fn param_gradient(
        &self,
        cache: &ForwardCache,
        bp: &Backprop,
        row_weights: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        self.check_backprop(bp)?;
        let rows = cache.rows();
        if let Some(w) = row_weights {
            if w.len() != rows {
                return Err(Error::Shape(format!(
                    "{} row weights for a batch of {rows}",
                    w.len()
                )));
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        for (l, spec) in self.layers.iter().enumerate() {
            let scaled;
            let delta = match row_weights {
                Some(w) => {
                    let mut d = bp.deltas[l].clone();
                    for (mut row, &wi) in d.axis_iter_mut(Axis(0)).zip(w) {
                        row *= wi;
                    }
                    scaled = d;
                    &scaled
                }
                None => &bp.deltas[l],
            };
            let input = if l == 0 {
                cache.input.view()
            } else {
                cache.post[l - 1].view()
            };
            let start = self.offsets[l];
            let wlen = spec.out_dim * spec.in_dim;
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (spec.out_dim, spec.in_dim),
                    &mut grad[start..start + wlen],
                )
                .expect("layer slice matches its spec");
                general_mat_mul(1.0, &delta.t(), &input, 0.0, &mut gw);
            }
            let gb = delta.sum_axis(Axis(0));
            grad[start + wlen..start + wlen + spec.out_dim]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(g, v)| *g = *v);
        }
        Ok(grad)
    }

    pub fn input_gradient(&self, bp: &Backprop) -> Result<Array2<f64>> {
        self.check_backprop(bp)?;
        let first = &bp.deltas[0];
        let mut gx = Array2::<f64>::zeros((first.nrows(), self.input_dim()));
        general_mat_mul(1.0, first, &self.weights(0), 0.0, &mut gx);
        Ok(gx)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.stamp != self.stamp
            || cache.pre.len() != self.layers.len()
            || cache.input.ncols() != self.input_dim()
        {
            return Err(Error::Usage(
                "forward cache was not produced by this network state".into(),
            ));
        }
        Ok(())
    }

    fn check_backprop(&self, bp: &Backprop) -> Result<()> {
        if bp.stamp != self.stamp || bp.deltas.len() != self.layers.len() {
            return Err(Error::Usage(
                "reverse pass was not produced by this network state".into(),
            ));
        }
        Ok(())
    }
}

fn scale_by_derivative(delta: &mut Array2<f64>, act: Activation, z: &Array2<f64>, a: &Array2<f64>) {
    if act == Activation::Identity {
        return;
    }
    ndarray::Zip::from(delta)
        .and(z)
        .and(a)
        .for_each(|d, &z, &a| *d *= act.derivative(z, a));
}

/// Per-call record of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    stamp: u64,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.input.nrows()
    }

    /// Pre-activations of the last layer. For an `Exp` head this is the log
    /// of the output, without the round trip through `exp`.
    pub fn output_pre_activation(&self) -> &Array2<f64> {
        &self.pre[self.pre.len() - 1]
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn activations(&self) -> &[Array2<f64>] {
        &self.post
    }
}

/// Pre-activation gradients of every layer for one upstream vector.
#[derive(Clone, Debug)]
pub struct Backprop {
    stamp: u64,
    deltas: Vec<Array2<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table_like(
        input: usize,
        output: usize,
        hidden: Activation,
        head: Activation,
    ) -> Vec<LayerSpec> {
        stack(input, 8, 3, output, hidden, head)
    }

    #[test]
    fn rejects_non_chaining_specs() {
        let specs = vec![
            LayerSpec::new(2, 4, Activation::Tanh),
            LayerSpec::new(3, 1, Activation::Identity),
        ];
        assert!(matches!(MlpNetwork::init(&specs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_exp_on_hidden_layer() {
        let specs = vec![
            LayerSpec::new(2, 4, Activation::Exp),
            LayerSpec::new(4, 1, Activation::Identity),
        ];
        assert!(matches!(validate_specs(&specs), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_matches_layers() {
        let specs = table_like(3, 1, Activation::Elu, Activation::Exp);
        let net = MlpNetwork::zeros(&specs).unwrap();
        assert_eq!(net.num_params(), 3 * 8 + 8 + 8 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn init_respects_bound_for_four_inputs() {
        let specs = vec![LayerSpec::new(4, 16, Activation::Tanh)];
        let net = MlpNetwork::init(&specs, 7).unwrap();
        assert!(net.params().iter().all(|p| p.abs() <= 0.5));
        assert!(net.params().iter().any(|p| p.abs() > 0.3));
    }

    #[test]
    fn init_is_deterministic() {
        let specs = table_like(2, 2, Activation::Tanh, Activation::Identity);
        let a = MlpNetwork::init(&specs, 42).unwrap();
        let b = MlpNetwork::init(&specs, 42).unwrap();
        let c = MlpNetwork::init(&specs, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_mean_within_three_standard_errors() {
        // 128 inputs -> bound b = 1/sqrt(128); 782 x 128 weights + biases > 1e5.
        let specs = vec![LayerSpec::new(128, 782, Activation::Identity)];
        let net = MlpNetwork::init(&specs, 3).unwrap();
        let n = net.num_params() as f64;
        assert!(n >= 1e5);
        let b = 1.0 / 128f64.sqrt();
        let mean = net.params().iter().sum::<f64>() / n;
        let se = b / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn zero_tanh_net_outputs_zero_and_exp_head_outputs_one() {
        let net =
            MlpNetwork::zeros(&table_like(2, 2, Activation::Tanh, Activation::Identity)).unwrap();
        let (y, _) = net.forward(array![[0.3, -1.2], [5.0, 2.0]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        let net = MlpNetwork::zeros(&table_like(3, 1, Activation::Elu, Activation::Exp)).unwrap();
        let (y, _) = net.forward(array![[0.3, -1.2, 9.0]].view()).unwrap();
        assert_eq!(y[[0, 0]], 1.0);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let specs = vec![
            LayerSpec::new(3, 5, Activation::Elu),
            LayerSpec::new(5, 4, Activation::Tanh),
            LayerSpec::new(4, 2, Activation::Identity),
        ];
        let net = MlpNetwork::init(&specs, 11).unwrap();
        let x = [0.4, -0.9, 1.7];
        let (y, _) = net
            .forward(ArrayView2::from_shape((1, 3), &x).unwrap())
            .unwrap();

        // Independent evaluation straight from the flat parameter layout.
        let p = net.params();
        let mut off = 0;
        let mut h: Vec<f64> = x.to_vec();
        for spec in &specs {
            let mut next = vec![0.0; spec.out_dim];
            for (o, out) in next.iter_mut().enumerate() {
                let mut acc = p[off + spec.out_dim * spec.in_dim + o];
                for (i, hi) in h.iter().enumerate() {
                    acc += p[off + o * spec.in_dim + i] * hi;
                }
                *out = match spec.activation {
                    Activation::Elu if acc < 0.0 => acc.exp() - 1.0,
                    Activation::Tanh => acc.tanh(),
                    _ => acc,
                };
            }
            off += spec.out_dim * spec.in_dim + spec.out_dim;
            h = next;
        }
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_bad_shapes_and_values() {
        let net =
            MlpNetwork::zeros(&table_like(2, 2, Activation::Tanh, Activation::Identity)).unwrap();
        assert!(matches!(
            net.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            net.forward(array![[f64::NAN, 2.0]].view()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn linear_layer_gradients_are_outer_product_and_transpose() {
        let specs = vec![LayerSpec::new(3, 2, Activation::Identity)];
        let mut net = MlpNetwork::zeros(&specs).unwrap();
        net.params_mut()
            .copy_from_slice(&[1.0, 2.0, 3.0, -4.0, 5.0, -6.0, 0.5, 0.25]);
        let x = array![[0.1, 0.2, 0.3]];
        let u = array![[2.0, -1.0]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let g = net.backward_params(&cache, u.view()).unwrap();
        let expected_w = [0.2, 0.4, 0.6, -0.1, -0.2, -0.3];
        for (a, b) in g[..6].iter().zip(&expected_w) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(&g[6..], &[2.0, -1.0]);

        let gx = net.grad_input(&cache, u.view()).unwrap();
        // W^T u = [1*2 + -4*-1, 2*2 + 5*-1, 3*2 + -6*-1]
        assert_eq!(gx.row(0).to_vec(), vec![6.0, -1.0, 12.0]);
    }

    #[test]
    fn zero_upstream_and_zero_net_give_zero_gradients() {
        let specs = table_like(3, 1, Activation::Elu, Activation::Identity);
        let net = MlpNetwork::init(&specs, 5).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let g = net
            .backward_params(&cache, Array2::zeros((2, 1)).view())
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let zero = MlpNetwork::zeros(&specs).unwrap();
        let (_, cache) = zero.forward(x.view()).unwrap();
        let gx = zero
            .grad_input(&cache, Array2::ones((2, 1)).view())
            .unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_a_usage_error() {
        let specs = table_like(2, 1, Activation::Tanh, Activation::Identity);
        let mut net = MlpNetwork::init(&specs, 1).unwrap();
        let (_, cache) = net.forward(array![[0.1, 0.2]].view()).unwrap();
        net.params_mut()[0] += 1.0;
        let err = net.backward_params(&cache, array![[1.0]].view());
        assert!(matches!(err, Err(Error::Usage(_))));

        let other = MlpNetwork::init(&specs, 2).unwrap();
        assert!(matches!(
            other.grad_input(&cache, array![[1.0]].view()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn row_weighted_gradient_equals_scaled_upstream() {
        let specs = table_like(2, 2, Activation::Tanh, Activation::Identity);
        let net = MlpNetwork::init(&specs, 9).unwrap();
        let x = array![[0.1, 0.7], [-0.3, 0.2], [0.9, -0.5]];
        let u = array![[1.0, -1.0], [0.5, 0.5], [-2.0, 1.0]];
        let w = [0.3, -1.5, 2.0];
        let (_, cache) = net.forward(x.view()).unwrap();
        let bp = net.backprop(&cache, u.view()).unwrap();
        let weighted = net.param_gradient(&cache, &bp, Some(&w)).unwrap();
        let mut scaled = u.clone();
        for (mut row, wi) in scaled.axis_iter_mut(Axis(0)).zip(w) {
            row *= wi;
        }
        let direct = net.backward_params(&cache, scaled.view()).unwrap();
        for (a, b) in weighted.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
