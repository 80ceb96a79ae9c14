//! Dense networks with hand-written batched backpropagation, plus the
//! running observation normalizer.
//!
//! Batches are stored column-wise (one sample per column) so layer maps are
//! plain matrix products. Hidden layers use tanh; outputs are linear.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Forward-pass activations kept for the backward pass. `activations[0]` is
/// the input batch, `activations[L]` the linear output.
pub struct MlpCache {
    pub activations: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Random initialization scaled by 1/√fan_in, which keeps tanh layers in
    /// their linear range at the start of training.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        let z: f64 = rng.sample(StandardNormal);
                        z * scale
                    }),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeroed(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2);
        Mlp {
            layers: sizes
                .windows(2)
                .map(|pair| Layer {
                    w: DMatrix::zeros(pair[1], pair[0]),
                    b: DVector::zeros(pair[1]),
                })
                .collect(),
        }
    }

    /// Zeros the last layer so the network output is exactly zero everywhere
    /// while earlier layers keep their features.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().expect("network has layers");
        last.w.fill(0.0);
        last.b.fill(0.0);
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("network has layers").b.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).activations.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> MlpCache {
        assert_eq!(x.nrows(), self.input_dim(), "input dimension");
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * activations.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if i + 1 < n_layers {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        MlpCache { activations }
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss gradient at the network output (same shape as the output batch).
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> Vec<LayerGrad> {
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<LayerGrad>> = (0..n_layers).map(|_| None).collect();
        let mut delta = d_out.clone();
        for i in (0..n_layers).rev() {
            if i + 1 < n_layers {
                // Route through the tanh that produced activations[i+1].
                let a = &cache.activations[i + 1];
                delta.zip_apply(a, |d, act| *d *= 1.0 - act * act);
            }
            grads[i] = Some(LayerGrad {
                w: &delta * cache.activations[i].transpose(),
                b: delta.column_sum(),
            });
            if i > 0 {
                delta = self.layers[i].w.transpose() * delta;
            }
        }
        grads.into_iter().map(|g| g.unwrap()).collect()
    }

    pub fn append_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
    }

    pub fn read_flat<I: Iterator<Item = f64>>(&mut self, it: &mut I) {
        for layer in &mut self.layers {
            for v in layer.w.iter_mut() {
                *v = it.next().expect("flat parameter vector long enough");
            }
            for v in layer.b.iter_mut() {
                *v = it.next().expect("flat parameter vector long enough");
            }
        }
    }
}

/// Appends layer gradients to a flat vector in the same order as
/// [`Mlp::append_flat`].
pub fn append_grads_flat(grads: &[LayerGrad], out: &mut Vec<f64>) {
    for g in grads {
        out.extend(g.w.iter());
        out.extend(g.b.iter());
    }
}

const NORM_EPS: f64 = 1e-8;

/// Running per-dimension mean/variance of the observation stream. Until
/// frozen it absorbs every batch it sees; once frozen it is a fixed affine
/// map, so saved policies behave identically forever after.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNormalizer {
    pub mean: DVector<f64>,
    /// Sum of squared deviations from the mean (count × variance).
    pub m2: DVector<f64>,
    pub count: f64,
    pub frozen: bool,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        ObsNormalizer {
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
            count: 0.0,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Merges one column-wise batch into the running statistics.
    pub fn update_batch(&mut self, x: &DMatrix<f64>) {
        if self.frozen || x.ncols() == 0 {
            return;
        }
        assert_eq!(x.nrows(), self.dim(), "observation dimension");
        let n_b = x.ncols() as f64;
        let mean_b = x.column_mean();
        let mut m2_b = DVector::zeros(self.dim());
        for col in x.column_iter() {
            let d = col - &mean_b;
            m2_b += d.component_mul(&d);
        }
        let n_a = self.count;
        let n = n_a + n_b;
        let delta = &mean_b - &self.mean;
        self.mean += &delta * (n_b / n);
        self.m2 += m2_b + delta.component_mul(&delta) * (n_a * n_b / n);
        self.count = n;
    }

    fn scale(&self) -> DVector<f64> {
        if self.count < 1.0 {
            return DVector::from_element(self.dim(), 1.0);
        }
        self.m2.map(|m2| 1.0 / (m2 / self.count + NORM_EPS).sqrt())
    }

    pub fn normalize_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.count < 1.0 {
            return x.clone();
        }
        (x - &self.mean).component_mul(&self.scale())
    }

    pub fn normalize_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.count < 1.0 {
            return x.clone();
        }
        let scale = self.scale();
        let mut out = x.clone();
        for mut col in out.column_iter_mut() {
            col -= &self.mean;
            col.component_mul_assign(&scale);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(idx: u64) -> ChaCha8Rng {
        crate::rng::stream(37, "net-test", idx)
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = Mlp::zeroed(&[5, 8, 3]);
        let x = DMatrix::from_fn(5, 4, |r, c| (r * c) as f64 + 0.5);
        let y = net.forward(&x);
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), (3, 4));
    }

    #[test]
    fn single_linear_layer_is_exact() {
        let mut net = Mlp::zeroed(&[1, 1]);
        net.layers[0].w[(0, 0)] = 2.0;
        net.layers[0].b[0] = 1.0;
        let y = net.forward(&DMatrix::from_element(1, 1, 0.5));
        assert_eq!(y[(0, 0)], 2.0);
    }

    #[test]
    fn two_layer_forward_matches_hand_computation() {
        let mut net = Mlp::zeroed(&[1, 1, 1]);
        net.layers[0].w[(0, 0)] = 0.7;
        net.layers[0].b[0] = 0.1;
        net.layers[1].w[(0, 0)] = -1.3;
        net.layers[1].b[0] = 0.4;
        let x = 0.9;
        let want = -1.3 * (0.7 * x + 0.1f64).tanh() + 0.4;
        let y = net.forward(&DMatrix::from_element(1, 1, x));
        assert!((y[(0, 0)] - want).abs() < 1e-15);
    }

    /// Backward pass against central finite differences on a random network,
    /// using loss = Σ r_ij·y_ij with fixed random r.
    #[test]
    fn backward_matches_finite_differences()
    {
        let mut r = rng(0);
        let net = Mlp::new(&[4, 6, 5, 2], &mut r);
        let x = DMatrix::from_fn(4, 3, |_, _| r.sample::<f64, _>(StandardNormal));
        let weights = DMatrix::from_fn(2, 3, |_, _| r.sample::<f64, _>(StandardNormal));

        let loss = |net: &Mlp| net.forward(&x).component_mul(&weights).sum();

        let cache = net.forward_cached(&x);
        let grads = net.backward(&cache, &weights);

        let mut flat = Vec::new();
        net.append_flat(&mut flat);
        let mut grad_flat = Vec::new();
        append_grads_flat(&grads, &mut grad_flat);

        let h = 1e-6;
        for (i, g) in grad_flat.iter().enumerate() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            plus.read_flat(&mut fp.iter().copied());
            let mut fm = flat.clone();
            fm[i] -= h;
            minus.read_flat(&mut fm.iter().copied());
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - g).abs() < 1e-6 * (1.0 + g.abs()),
                "param {i}: fd {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn flat_round_trip_is_identity() {
        let mut r = rng(1);
        let net = Mlp::new(&[3, 4, 2], &mut r);
        let mut flat = Vec::new();
        net.append_flat(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut copy = Mlp::zeroed(&[3, 4, 2]);
        copy.read_flat(&mut flat.iter().copied());
        assert_eq!(net, copy);
    }

    #[test]
    fn normalizer_flattens_a_constant_stream() {
        let mut norm = ObsNormalizer::new(3);
        let batch = DMatrix::from_fn(3, 50, |r, _| r as f64 * 7.0 - 2.0);
        for _ in 0..4 {
            norm.update_batch(&batch);
        }
        let out = norm.normalize_vec(&DVector::from_vec(vec![-2.0, 5.0, 12.0]));
        assert!(out.iter().all(|v| v.abs() < 1e-6), "{out}");
    }

    #[test]
    fn normalizer_whitens_a_random_stream() {
        let mut r = rng(2);
        let mut norm = ObsNormalizer::new(2);
        let mut all = Vec::new();
        for _ in 0..40 {
            let batch = DMatrix::from_fn(2, 250, |row, _| {
                let z: f64 = r.sample(StandardNormal);
                if row == 0 {
                    3.0 + 2.0 * z
                } else {
                    -1.0 + 0.5 * z
                }
            });
            norm.update_batch(&batch);
            all.push(batch);
        }
        // Statistics of the normalized stream under the final statistics.
        let mut n = 0.0;
        let mut sum = DVector::zeros(2);
        let mut sq = DVector::zeros(2);
        for batch in &all {
            let y = norm.normalize_batch(batch);
            for col in y.column_iter() {
                sum += col;
                sq += col.component_mul(&col);
                n += 1.0;
            }
        }
        let mean = &sum / n;
        let var = &sq / n - mean.component_mul(&mean);
        assert!(mean.iter().all(|v| v.abs() < 0.05), "{mean}");
        assert!(var.iter().all(|v| (v - 1.0).abs() < 0.05), "{var}");
    }

    #[test]
    fn frozen_normalizer_is_a_fixed_affine_map() {
        let mut r = rng(3);
        let mut norm = ObsNormalizer::new(2);
        norm.update_batch(&DMatrix::from_fn(2, 100, |_, _| {
            r.sample::<f64, _>(StandardNormal) * 3.0 + 1.0
        }));
        norm.freeze();
        let before = norm.clone();
        norm.update_batch(&DMatrix::from_element(2, 50, 1e6));
        assert_eq!(norm, before, "frozen statistics must not move");

        // Affine: f(x) − f(0) is linear, checked at three points.
        let f = |x: &DVector<f64>| norm.normalize_vec(x);
        let zero = f(&DVector::zeros(2));
        let e0 = f(&DVector::from_vec(vec![1.0, 0.0])) - &zero;
        let e1 = f(&DVector::from_vec(vec![0.0, 1.0])) - &zero;
        let probe = DVector::from_vec(vec![-3.7, 2.2]);
        let lin = &e0 * probe[0] + &e1 * probe[1] + &zero;
        let direct = f(&probe);
        assert!((lin - direct).norm() < 1e-9);
    }

    #[test]
    fn chunked_and_single_batch_statistics_agree() {
        let mut r = rng(4);
        let data = DMatrix::from_fn(3, 300, |_, _| r.sample::<f64, _>(StandardNormal) * 2.0);
        let mut whole = ObsNormalizer::new(3);
        whole.update_batch(&data);
        let mut chunked = ObsNormalizer::new(3);
        chunked.update_batch(&data.columns(0, 113).into_owned());
        chunked.update_batch(&data.columns(113, 87).into_owned());
        chunked.update_batch(&data.columns(200, 100).into_owned());
        assert!((&whole.mean - &chunked.mean).norm() < 1e-10);
        assert!((&whole.m2 - &chunked.m2).norm() < 1e-7);
    }
}
