use rand::Rng;

use super::{Ctx, LEAKY_SLOPE};
use crate::error::Result;
use crate::linalg;
use crate::params::{Group, ParamStore};
use crate::tensor::{Padding, ParamId, Tensor, Var};

/// Floor on the estimated spectral norm; a zero kernel stays zero instead of
/// dividing by zero.
const SIGMA_FLOOR: f64 = 1e-12;

/// Temporal convolution whose kernel is divided by a power-iteration estimate
/// of its largest singular value, followed by LeakyReLU.
///
/// The kernel `[w, F_in, F_out]` is viewed as the matrix `M = [w·F_in, F_out]`.
/// `u ∈ R^{F_out}` is the persistent estimate of the dominant singular
/// direction, and the estimate is `σ̂ = ‖M u‖`. With `u` held fixed this is a
/// smooth function of the kernel, so its tape gradient is exact.
#[derive(Clone, Debug)]
pub struct SpectralConv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub u: ParamId,
    pub width: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub power_iters: usize,
    pub slope: f64,
}

impl SpectralConv1d {
    /// Minimum power iterations used to certify the estimate, at
    /// construction and before checkpointing.
    pub const CERTIFY_ITERS: usize = 30;
    /// Certification keeps iterating past the minimum until the estimate
    /// settles, up to this many iterations.
    const CERTIFY_MAX_ITERS: usize = 20_000;

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        width: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((width * fan_in) as f64).sqrt();
        let kernel = store.add(
            format!("{name}.kernel"),
            group,
            Tensor::uniform(&[width, fan_in, fan_out], -bound, bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[fan_out]));
        let u0 = normalized(Tensor::randn(&[fan_out], 1.0, rng).into_data());
        let u = store.add_buffer(format!("{name}.u"), group, Tensor::new(&[fan_out], u0).unwrap());
        let layer = SpectralConv1d {
            kernel,
            bias,
            u,
            width,
            fan_in,
            fan_out,
            power_iters: 1,
            slope: LEAKY_SLOPE,
        };
        layer.certify(store, Self::CERTIFY_ITERS);
        layer
    }

    fn rows(&self) -> usize {
        self.width * self.fan_in
    }

    /// Runs at least `iters` power iterations on the stored kernel, then
    /// continues until `σ̂` changes by less than one part in 1e12.
    pub fn certify(&self, store: &mut ParamStore, iters: usize) {
        let (rows, cols) = (self.rows(), self.fan_out);
        let m = store.value(self.kernel).data().to_vec();
        let mut u = power_iterate(&m, store.value(self.u).data(), rows, cols, iters);
        let mut sigma = norm(&mat_vec(&m, &u, rows, cols));
        for _ in iters..Self::CERTIFY_MAX_ITERS {
            u = power_iterate(&m, &u, rows, cols, 1);
            let next = norm(&mat_vec(&m, &u, rows, cols));
            let settled = (next - sigma).abs() <= 1e-12 * next.max(SIGMA_FLOOR);
            sigma = next;
            if settled {
                break;
            }
        }
        *store.value_mut(self.u) = Tensor::new(&[cols], u).unwrap();
    }

    /// `σ̂ = ‖M u‖` for the stored kernel and `u`.
    pub fn sigma_estimate(&self, store: &ParamStore) -> f64 {
        let mu = mat_vec(
            store.value(self.kernel).data(),
            store.value(self.u).data(),
            self.rows(),
            self.fan_out,
        );
        norm(&mu).max(SIGMA_FLOOR)
    }

    /// The kernel as the forward pass would use it in eval mode.
    pub fn normalized_kernel(&self, store: &ParamStore) -> Tensor {
        let s = self.sigma_estimate(store);
        store.value(self.kernel).map(|v| v / s)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let u = if ctx.mode().updates_state() {
            let kernel = ctx.store().value(self.kernel);
            let u = power_iterate(
                kernel.data(),
                ctx.buffer(self.u).data(),
                self.rows(),
                self.fan_out,
                self.power_iters,
            );
            let u = Tensor::new(&[self.fan_out], u)?;
            ctx.queue_update(self.u, u.clone());
            u
        } else {
            ctx.buffer(self.u).clone()
        };

        let kernel = ctx.param(self.kernel);
        let bias = ctx.param(self.bias);
        let t = &mut ctx.tape;
        let matrix = t.reshape(kernel, &[self.rows(), self.fan_out])?;
        let u = t.constant(u.reshape(&[self.fan_out, 1])?);
        let mu = t.matmul(matrix, u)?;
        let sq = t.square(mu)?;
        let energy = t.sum_all(sq)?;
        let energy = t.clamp_min(energy, SIGMA_FLOOR * SIGMA_FLOOR)?;
        let sigma = t.sqrt(energy)?;
        let normalized = t.div(kernel, sigma)?;
        let y = t.conv1d(x, normalized, Padding::Same)?;
        let y = t.add(y, bias)?;
        t.leaky_relu(y, self.slope)
    }
}

/// Largest singular value of a `[w, F_in, F_out]` kernel viewed as a
/// `[w·F_in, F_out]` matrix, from the symmetric eigen-decomposition of `MᵀM`.
pub fn spectral_norm_exact(kernel: &Tensor) -> f64 {
    let s = kernel.shape();
    let cols = *s.last().unwrap();
    let rows = kernel.len() / cols;
    let m = kernel.data();
    let mut gram = vec![0.0; cols * cols];
    for r in 0..rows {
        for i in 0..cols {
            for j in 0..cols {
                gram[i * cols + j] += m[r * cols + i] * m[r * cols + j];
            }
        }
    }
    let eig = linalg::symmetric_eigen(&gram, cols);
    eig.values
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b))
        .max(0.0)
        .sqrt()
}

fn mat_vec(m: &[f64], u: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| m[r * cols + c] * u[c]).sum())
        .collect()
}

fn mat_t_vec(m: &[f64], v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += m[r * cols + c] * v[r];
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v).max(SIGMA_FLOOR);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn power_iterate(m: &[f64], u: &[f64], rows: usize, cols: usize, iters: usize) -> Vec<f64> {
    let mut u = u.to_vec();
    for _ in 0..iters {
        let v = normalized(mat_vec(m, &u, rows, cols));
        let next = mat_t_vec(m, &v, rows, cols);
        if norm(&next) < SIGMA_FLOOR {
            break;
        }
        u = normalized(next);
    }
    u
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layers::Mode;

    fn layer_with_kernel(kernel: Tensor) -> (ParamStore, SpectralConv1d) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = kernel.shape().to_vec();
        let mut store = ParamStore::new();
        let layer = SpectralConv1d::new(&mut store, Group::Encoder, "c", s[0], s[1], s[2], &mut rng);
        *store.value_mut(layer.kernel) = kernel;
        layer.certify(&mut store, SpectralConv1d::CERTIFY_ITERS);
        (store, layer)
    }

    #[test]
    fn diagonal_kernel_singular_values_rescaled() {
        // w = 1, M = diag(2, 0.5): normalized singular values are {1, 0.25}.
        let kernel = Tensor::new(&[1, 2, 2], vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let (store, layer) = layer_with_kernel(kernel);
        let k = layer.normalized_kernel(&store);
        let gram = [
            k.data()[0] * k.data()[0] + k.data()[2] * k.data()[2],
            k.data()[0] * k.data()[1] + k.data()[2] * k.data()[3],
            k.data()[0] * k.data()[1] + k.data()[2] * k.data()[3],
            k.data()[1] * k.data()[1] + k.data()[3] * k.data()[3],
        ];
        let mut sv: Vec<f64> = linalg::symmetric_eigen(&gram, 2)
            .values
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sv[0] - 1.0).abs() < 1e-9, "{sv:?}");
        assert!((sv[1] - 0.25).abs() < 1e-9, "{sv:?}");
    }

    #[test]
    fn unit_norm_kernel_is_a_fixed_point() {
        let kernel = Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.3]).unwrap();
        let (store, layer) = layer_with_kernel(kernel.clone());
        let k = layer.normalized_kernel(&store);
        assert!(k.max_abs_diff(&kernel) < 1e-3);
    }

    #[test]
    fn zero_kernel_does_not_blow_up() {
        let (store, layer) = layer_with_kernel(Tensor::zeros(&[3, 2, 2]));
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.input(Tensor::ones(&[1, 4, 2]));
        let y = layer.forward(&mut ctx, x).unwrap();
        assert!(ctx.value(y).all_finite());
        let loss = ctx.tape.sum_all(y).unwrap();
        let (grads, _) = ctx.backward(loss).unwrap();
        for (_, g) in grads.params() {
            assert!(g.all_finite());
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let layer = SpectralConv1d::new(&mut store, Group::Encoder, "c", 3, 2, 4, &mut rng);
        let x = Tensor::randn(&[2, 6, 2], 1.0, &mut rng);
        let run = |store: &ParamStore| {
            let mut ctx = Ctx::new(store, Mode::Eval);
            let xv = ctx.input(x.clone());
            let y = layer.forward(&mut ctx, xv).unwrap();
            let out = ctx.value(y).clone();
            assert!(ctx.into_updates().is_empty());
            out
        };
        assert_eq!(run(&store), run(&store));
    }

    #[test]
    fn certified_random_kernels_have_unit_spectral_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let layer = SpectralConv1d::new(&mut store, Group::Encoder, "c", 3, 4, 6, &mut rng);
            let sn = spectral_norm_exact(&layer.normalized_kernel(&store));
            assert!(sn <= 1.0 + 1e-3, "spectral norm {sn}");
        }
    }
}
