//! Slice-level numeric kernels shared by the tape's forward and backward rules.

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,k] += a[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · b[m,n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn narrow_copy(
    src: &[f64],
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
    out: &mut [f64],
) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let dim = shape[axis];
    for o in 0..outer {
        let s = (o * dim + start) * inner;
        let d = o * len * inner;
        out[d..d + len * inner].copy_from_slice(&src[s..s + len * inner]);
    }
}

/// Adds the `start..start+len` slab of `src` (laid out as `shape`) into `dst`.
pub(crate) fn narrow_copy_add(
    src: &[f64],
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
    dst: &mut [f64],
) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let dim = shape[axis];
    for o in 0..outer {
        let s = (o * dim + start) * inner;
        let d = o * len * inner;
        for (x, g) in dst[d..d + len * inner].iter_mut().zip(&src[s..s + len * inner]) {
            *x += g;
        }
    }
}

pub(crate) fn narrow_scatter_add(
    grad: &[f64],
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
    dst: &mut [f64],
) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let dim = shape[axis];
    for o in 0..outer {
        let d = (o * dim + start) * inner;
        let s = o * len * inner;
        for (x, g) in dst[d..d + len * inner]
            .iter_mut()
            .zip(&grad[s..s + len * inner])
        {
            *x += g;
        }
    }
}

/// Output shape of permuting `shape` by `perm` and, for each output flat
/// index, the input flat index it reads from.
pub(crate) fn permute_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src: usize = idx
            .iter()
            .zip(perm)
            .map(|(&i, &p)| i * in_strides[p])
            .sum();
        map.push(src);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, map)
}

/// For a reduction over `axes`, the kept-dimension output shape and the
/// output flat index of every input element.
pub(crate) fn reduce_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let out_strides = strides(&kept);
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let dst: usize = idx
            .iter()
            .enumerate()
            .map(|(ax, &i)| if axes.contains(&ax) { 0 } else { i * out_strides[ax] })
            .sum();
        map.push(dst);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (kept, map)
}

pub(crate) fn softmax_rows(x: &[f64], n: usize, out: &mut [f64]) {
    for (row, orow) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
}

/// Output length and left padding for "same" windows: `ceil(len / stride)`
/// outputs, zero padding split symmetrically with the odd element on the left.
pub(crate) fn same_padding(len: usize, window: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + window).saturating_sub(len);
    (out, total.div_ceil(2))
}

pub(crate) struct ConvGeom {
    pub batch: usize,
    pub len: usize,
    pub fin: usize,
    pub fout: usize,
    pub width: usize,
    pub pad_left: usize,
    pub out_len: usize,
}

pub(crate) fn conv1d_forward(x: &[f64], ker: &[f64], g: &ConvGeom, out: &mut [f64]) {
    for b in 0..g.batch {
        for t in 0..g.out_len {
            let orow = &mut out[(b * g.out_len + t) * g.fout..(b * g.out_len + t + 1) * g.fout];
            for j in 0..g.width {
                let pos = t + j;
                if pos < g.pad_left || pos - g.pad_left >= g.len {
                    continue;
                }
                let src = pos - g.pad_left;
                let xrow = &x[(b * g.len + src) * g.fin..(b * g.len + src + 1) * g.fin];
                for (i, &xv) in xrow.iter().enumerate() {
                    let krow = &ker[(j * g.fin + i) * g.fout..(j * g.fin + i + 1) * g.fout];
                    for (o, kv) in orow.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    ker: &[f64],
    grad: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dker: Option<&mut [f64]>,
) {
    let mut dx = dx;
    let mut dker = dker;
    for b in 0..g.batch {
        for t in 0..g.out_len {
            let grow = &grad[(b * g.out_len + t) * g.fout..(b * g.out_len + t + 1) * g.fout];
            for j in 0..g.width {
                let pos = t + j;
                if pos < g.pad_left || pos - g.pad_left >= g.len {
                    continue;
                }
                let src = pos - g.pad_left;
                for i in 0..g.fin {
                    let xi = (b * g.len + src) * g.fin + i;
                    let krow = &ker[(j * g.fin + i) * g.fout..(j * g.fin + i + 1) * g.fout];
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[xi] += grow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if let Some(dk) = dker.as_deref_mut() {
                        let xv = x[xi];
                        let dkrow =
                            &mut dk[(j * g.fin + i) * g.fout..(j * g.fin + i + 1) * g.fout];
                        for (d, gv) in dkrow.iter_mut().zip(grow) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct PoolGeom {
    pub batch: usize,
    pub len: usize,
    pub features: usize,
    pub window: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub out_len: usize,
}

impl PoolGeom {
    /// Source positions covered by output step `t`, padding excluded.
    fn span(&self, t: usize) -> std::ops::Range<usize> {
        let lo = (t * self.stride).saturating_sub(self.pad_left);
        let hi = (t * self.stride + self.window)
            .saturating_sub(self.pad_left)
            .min(self.len);
        lo..hi.max(lo)
    }
}

pub(crate) fn avg_pool_forward(x: &[f64], g: &PoolGeom, out: &mut [f64]) {
    let f = g.features;
    for b in 0..g.batch {
        for t in 0..g.out_len {
            let span = g.span(t);
            let count = span.len() as f64;
            if count == 0.0 {
                continue;
            }
            let orow = &mut out[(b * g.out_len + t) * f..(b * g.out_len + t + 1) * f];
            for p in span {
                let xrow = &x[(b * g.len + p) * f..(b * g.len + p + 1) * f];
                for (o, v) in orow.iter_mut().zip(xrow) {
                    *o += v / count;
                }
            }
        }
    }
}

pub(crate) fn avg_pool_backward(grad: &[f64], g: &PoolGeom, dx: &mut [f64]) {
    let f = g.features;
    for b in 0..g.batch {
        for t in 0..g.out_len {
            let span = g.span(t);
            let count = span.len() as f64;
            if count == 0.0 {
                continue;
            }
            let grow = &grad[(b * g.out_len + t) * f..(b * g.out_len + t + 1) * f];
            for p in span {
                let drow = &mut dx[(b * g.len + p) * f..(b * g.len + p + 1) * f];
                for (d, gv) in drow.iter_mut().zip(grow) {
                    *d += gv / count;
                }
            }
        }
    }
}

#[inline]
fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// `out[b,j,k] = Σ_h w[h] · leaky(left[b,j,h] + right[b,k,h])`
pub(crate) fn pair_scores_forward(
    left: &[f64],
    right: &[f64],
    w: &[f64],
    batch: usize,
    nodes: usize,
    slope: f64,
    out: &mut [f64],
) {
    let h = w.len();
    for b in 0..batch {
        for j in 0..nodes {
            let lrow = &left[(b * nodes + j) * h..(b * nodes + j + 1) * h];
            for k in 0..nodes {
                let rrow = &right[(b * nodes + k) * h..(b * nodes + k + 1) * h];
                let mut s = 0.0;
                for ((l, r), wv) in lrow.iter().zip(rrow).zip(w) {
                    s += wv * leaky(l + r, slope);
                }
                out[(b * nodes + j) * nodes + k] = s;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_scores_backward(
    left: &[f64],
    right: &[f64],
    w: &[f64],
    grad: &[f64],
    batch: usize,
    nodes: usize,
    slope: f64,
    dleft: &mut [f64],
    dright: &mut [f64],
    dw: &mut [f64],
) {
    let h = w.len();
    for b in 0..batch {
        for j in 0..nodes {
            let lbase = (b * nodes + j) * h;
            for k in 0..nodes {
                let g = grad[(b * nodes + j) * nodes + k];
                if g == 0.0 {
                    continue;
                }
                let rbase = (b * nodes + k) * h;
                for c in 0..h {
                    let pre = left[lbase + c] + right[rbase + c];
                    let (act, d) = if pre > 0.0 { (pre, 1.0) } else { (slope * pre, slope) };
                    dw[c] += g * act;
                    let dp = g * w[c] * d;
                    dleft[lbase + c] += dp;
                    dright[rbase + c] += dp;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_is_left_biased() {
        assert_eq!(same_padding(10, 3, 1), (10, 1));
        assert_eq!(same_padding(10, 2, 1), (10, 1));
        assert_eq!(same_padding(10, 4, 1), (10, 2));
        assert_eq!(same_padding(10, 1, 1), (10, 0));
    }

    #[test]
    fn permute_map_transposes() {
        let (shape, map) = permute_map(&[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(map, vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn reduce_map_middle_axis() {
        let (kept, map) = reduce_map(&[2, 3, 2], &[1]);
        assert_eq!(kept, vec![2, 1, 2]);
        assert_eq!(map, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }
}
