use super::params::{ParamGrads, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv3d { x: Var, w: Var, b: Var },
    Silu(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    Scale(Var, f64),
    MeanRows(Var),
    L2NormalizeRows(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScaleRows(Var, Vec<f64>),
    Upsample(Var, usize),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Reverse-mode tape over dense f64 tensors.
///
/// Matrices are row-major `[rows, cols]`. Volumes are `[channels, nz, ny, nx]`
/// with `x` fastest, matching the voxel layout of [`crate::volume::Volume`].
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected a matrix, got shape {shape:?}");
    (shape[0], shape[1])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// For a stride-2, pad-1, size-3 kernel: the output range `[lo, hi)` whose
/// input index `2 o - 1 + k` lies inside `0..n`.
fn conv_range(n_in: usize, n_out: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let mut hi = n_out;
    while hi > lo && 2 * (hi - 1) + k > n_in {
        hi -= 1;
    }
    (lo, hi)
}

/// Source taps of linear interpolation for output index `i` at integer scale
/// `s` (half-pixel centers, clamped at the border).
fn taps(i: usize, s: usize, n: usize) -> [(usize, f64); 2] {
    let src = ((i as f64 + 0.5) / s as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    let t = src - i0 as f64;
    [(i0, 1.0 - t), (i1, t)]
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], value: Vec<f64>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "constant shape");
        self.push(shape.to_vec(), value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.shape(id).to_vec(), store.values(id).to_vec(), Op::Param(id))
    }

    /// 3x3x3 convolution, stride 2, zero padding 1. `x: [ci, z, y, x]`,
    /// `w: [co, ci, 3, 3, 3]`, `b: [co]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4);
        assert_eq!(ws[1], xs[0]);
        assert_eq!(&ws[2..], &[3, 3, 3]);
        let (ci, co) = (xs[0], ws[0]);
        let nin = [xs[3], xs[2], xs[1]];
        let nout = nin.map(|n| n.div_ceil(2));
        let vin = nin[0] * nin[1] * nin[2];
        let vout = nout[0] * nout[1] * nout[2];
        let mut out = vec![0.0; co * vout];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        for o in 0..co {
            out[o * vout..(o + 1) * vout].fill(bv[o]);
        }
        let ranges: [Vec<(usize, usize)>; 3] = std::array::from_fn(|a| (0..3).map(|k| conv_range(nin[a], nout[a], k)).collect());
        for o in 0..co {
            let dst = &mut out[o * vout..(o + 1) * vout];
            for c in 0..ci {
                let src = &xv[c * vin..(c + 1) * vin];
                for kz in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wk = wv[((o * ci + c) * 3 + kz) * 9 + ky * 3 + kx];
                            let (zl, zh) = ranges[2][kz];
                            let (yl, yh) = ranges[1][ky];
                            let (xl, xh) = ranges[0][kx];
                            for oz in zl..zh {
                                let iz = 2 * oz + kz - 1;
                                for oy in yl..yh {
                                    let iy = 2 * oy + ky - 1;
                                    let drow = (oz * nout[1] + oy) * nout[0];
                                    let srow = (iz * nin[1] + iy) * nin[0];
                                    for ox in xl..xh {
                                        dst[drow + ox] += wk * src[srow + 2 * ox + kx - 1];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(vec![co, nout[2], nout[1], nout[0]], out, Op::Conv3d { x, w, b })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&a| a * sigmoid(a)).collect();
        self.push(self.shape(x).to_vec(), v, Op::Silu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(self.shape(a).to_vec(), v, Op::Add(a, b))
    }

    /// `a: [n, m]` plus a row vector `b: [1, m]` (or `[m]`) added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        assert_eq!(self.value(b).len(), m, "add_row width");
        let bv = self.value(b);
        let mut v = self.value(a).to_vec();
        for r in 0..n {
            for (x, y) in v[r * m..(r + 1) * m].iter_mut().zip(bv) {
                *x += y;
            }
        }
        self.push(vec![n, m], v, Op::AddRow(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = rows_cols(self.shape(a));
        let (k2, m) = rows_cols(self.shape(b));
        assert_eq!(k, k2, "matmul inner dims");
        let v = matmul(self.value(a), self.value(b), n, k, m);
        self.push(vec![n, m], v, Op::MatMul(a, b))
    }

    /// `a: [n, k]` times the transpose of `b: [m, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = rows_cols(self.shape(a));
        let (m, k2) = rows_cols(self.shape(b));
        assert_eq!(k, k2, "matmul_nt inner dims");
        let (av, bv) = (self.value(a), self.value(b));
        let mut v = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                v[i * m + j] = dot(&av[i * k..(i + 1) * k], &bv[j * k..(j + 1) * k]);
            }
        }
        self.push(vec![n, m], v, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        let v = transpose(self.value(a), n, m);
        self.push(vec![m, n], v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        let mut v = self.value(a).to_vec();
        for row in v.chunks_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(vec![n, m], v, Op::SoftmaxRows(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), v, Op::Scale(a, c))
    }

    /// Column means of `[n, m]` as `[1, m]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        let av = self.value(a);
        let mut v = vec![0.0; m];
        for r in 0..n {
            for (x, y) in v.iter_mut().zip(&av[r * m..(r + 1) * m]) {
                *x += y;
            }
        }
        v.iter_mut().for_each(|x| *x /= n as f64);
        self.push(vec![1, m], v, Op::MeanRows(a))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        let mut v = self.value(a).to_vec();
        for row in v.chunks_mut(m) {
            let norm = dot(row, row).sqrt().max(1e-12);
            row.iter_mut().for_each(|x| *x /= norm);
        }
        self.push(vec![n, m], v, Op::L2NormalizeRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let m = rows_cols(self.shape(parts[0])).1;
        let mut v = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (pn, pm) = rows_cols(self.shape(p));
            assert_eq!(pm, m, "concat_rows widths");
            v.extend_from_slice(self.value(p));
            n += pn;
        }
        self.push(vec![n, m], v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        assert!(start + len <= n, "slice_rows out of range");
        let v = self.value(a)[start * m..(start + len) * m].to_vec();
        self.push(vec![len, m], v, Op::SliceRows(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (_, m) = rows_cols(self.shape(a));
        let av = self.value(a);
        let v = idx.iter().flat_map(|&i| av[i * m..(i + 1) * m].iter().copied()).collect();
        self.push(vec![idx.len(), m], v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Multiplies row `r` by the constant `c[r]`.
    pub fn scale_rows(&mut self, a: Var, c: &[f64]) -> Var {
        let (n, m) = rows_cols(self.shape(a));
        assert_eq!(c.len(), n);
        let mut v = self.value(a).to_vec();
        for (row, &s) in v.chunks_mut(m).zip(c) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        self.push(vec![n, m], v, Op::ScaleRows(a, c.to_vec()))
    }

    /// Trilinear upsampling of `[c, z, y, x]` by an integer factor per axis.
    pub fn upsample_trilinear(&mut self, a: Var, factor: usize) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 4);
        let (c, nin) = (s[0], [s[3], s[2], s[1]]);
        let nout = nin.map(|n| n * factor);
        let av = self.value(a);
        let mut v = vec![0.0; c * nout.iter().product::<usize>()];
        let tx: Vec<_> = (0..nout[0]).map(|i| taps(i, factor, nin[0])).collect();
        let ty: Vec<_> = (0..nout[1]).map(|i| taps(i, factor, nin[1])).collect();
        let tz: Vec<_> = (0..nout[2]).map(|i| taps(i, factor, nin[2])).collect();
        let (vin, vout) = (nin.iter().product::<usize>(), nout.iter().product::<usize>());
        for ch in 0..c {
            let src = &av[ch * vin..(ch + 1) * vin];
            for z in 0..nout[2] {
                for y in 0..nout[1] {
                    for x in 0..nout[0] {
                        let mut acc = 0.0;
                        for &(iz, wz) in &tz[z] {
                            for &(iy, wy) in &ty[y] {
                                for &(ix, wx) in &tx[x] {
                                    acc += wz * wy * wx * src[(iz * nin[1] + iy) * nin[0] + ix];
                                }
                            }
                        }
                        v[ch * vout + (z * nout[1] + y) * nout[0] + x] = acc;
                    }
                }
            }
        }
        self.push(vec![c, nout[2], nout[1], nout[0]], v, Op::Upsample(a, factor))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(a).len(), "reshape size");
        let v = self.value(a).to_vec();
        self.push(shape.to_vec(), v, Op::Reshape(a))
    }

    /// `x W + b` for `x: [n, i]`, `W: [i, o]`, `b: [1, o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Propagates the given output gradients back through the tape and adds
    /// the parameter gradients into `grads`. Frozen parameters get nothing.
    pub fn backward(&self, seeds: &[(Var, &[f64])], store: &ParamStore, grads: &mut ParamGrads) {
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for &(v, s) in seeds {
            assert_eq!(s.len(), self.nodes[v.0].value.len(), "seed gradient size");
            accumulate(&mut g[v.0], s);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if !store.is_frozen(*id) {
                        for (a, b) in grads.get_mut(*id).iter_mut().zip(&gy) {
                            *a += b;
                        }
                    }
                }
                Op::Conv3d { x, w, b } => {
                    let (gx, gw, gb) = self.conv3d_backward(*x, *w, &gy);
                    accumulate(&mut g[x.0], &gx);
                    accumulate(&mut g[w.0], &gw);
                    accumulate(&mut g[b.0], &gb);
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let gx: Vec<f64> = xv
                        .iter()
                        .zip(&gy)
                        .map(|(&a, &d)| {
                            let s = sigmoid(a);
                            d * s * (1.0 + a * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut g[x.0], &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[a.0], &gy);
                    accumulate(&mut g[b.0], &gy);
                }
                Op::AddRow(a, b) => {
                    let m = node.shape[1];
                    let mut gb = vec![0.0; m];
                    for row in gy.chunks(m) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                    accumulate(&mut g[a.0], &gy);
                    accumulate(&mut g[b.0], &gb);
                }
                Op::MatMul(a, b) => {
                    let (n, k) = rows_cols(self.shape(*a));
                    let m = node.shape[1];
                    let bt = transpose(self.value(*b), k, m);
                    let ga = matmul(&gy, &bt, n, m, k);
                    let at = transpose(self.value(*a), n, k);
                    let gb = matmul(&at, &gy, k, n, m);
                    accumulate(&mut g[a.0], &ga);
                    accumulate(&mut g[b.0], &gb);
                }
                Op::MatMulNt(a, b) => {
                    let (n, k) = rows_cols(self.shape(*a));
                    let m = node.shape[1];
                    let ga = matmul(&gy, self.value(*b), n, m, k);
                    let gyt = transpose(&gy, n, m);
                    let gb = matmul(&gyt, self.value(*a), m, n, k);
                    accumulate(&mut g[a.0], &ga);
                    accumulate(&mut g[b.0], &gb);
                }
                Op::Transpose(a) => {
                    let (n, m) = rows_cols(&node.shape);
                    accumulate(&mut g[a.0], &transpose(&gy, n, m));
                }
                Op::SoftmaxRows(a) => {
                    let m = node.shape[1];
                    let mut gx = vec![0.0; gy.len()];
                    for ((yr, gr), xr) in node.value.chunks(m).zip(gy.chunks(m)).zip(gx.chunks_mut(m)) {
                        let s = dot(yr, gr);
                        for j in 0..m {
                            xr[j] = yr[j] * (gr[j] - s);
                        }
                    }
                    accumulate(&mut g[a.0], &gx);
                }
                Op::Scale(a, c) => {
                    let gx: Vec<f64> = gy.iter().map(|d| d * c).collect();
                    accumulate(&mut g[a.0], &gx);
                }
                Op::MeanRows(a) => {
                    let (n, _) = rows_cols(self.shape(*a));
                    let gx: Vec<f64> = (0..n).flat_map(|_| gy.iter().map(|d| d / n as f64)).collect();
                    accumulate(&mut g[a.0], &gx);
                }
                Op::L2NormalizeRows(a) => {
                    let m = node.shape[1];
                    let xv = self.value(*a);
                    let mut gx = vec![0.0; gy.len()];
                    for r in 0..node.shape[0] {
                        let (xr, yr, gr) = (&xv[r * m..(r + 1) * m], &node.value[r * m..(r + 1) * m], &gy[r * m..(r + 1) * m]);
                        let norm = dot(xr, xr).sqrt().max(1e-12);
                        let s = dot(yr, gr);
                        for j in 0..m {
                            gx[r * m + j] = (gr[j] - yr[j] * s) / norm;
                        }
                    }
                    accumulate(&mut g[a.0], &gx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        accumulate(&mut g[p.0], &gy[off..off + len]);
                        off += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let m = node.shape[1];
                    let mut gx = vec![0.0; self.value(*a).len()];
                    gx[start * m..start * m + gy.len()].copy_from_slice(&gy);
                    accumulate(&mut g[a.0], &gx);
                }
                Op::GatherRows(a, idx) => {
                    let m = node.shape[1];
                    let mut gx = vec![0.0; self.value(*a).len()];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..m {
                            gx[i * m + j] += gy[r * m + j];
                        }
                    }
                    accumulate(&mut g[a.0], &gx);
                }
                Op::ScaleRows(a, c) => {
                    let m = node.shape[1];
                    let gx: Vec<f64> = gy.iter().enumerate().map(|(i, d)| d * c[i / m]).collect();
                    accumulate(&mut g[a.0], &gx);
                }
                Op::Upsample(a, factor) => {
                    let gx = self.upsample_backward(*a, *factor, &gy);
                    accumulate(&mut g[a.0], &gx);
                }
                Op::Reshape(a) => accumulate(&mut g[a.0], &gy),
            }
        }
    }

    fn conv3d_backward(&self, x: Var, w: Var, gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let (ci, co) = (xs[0], ws[0]);
        let nin = [xs[3], xs[2], xs[1]];
        let nout = nin.map(|n| n.div_ceil(2));
        let vin = nin[0] * nin[1] * nin[2];
        let vout = nout[0] * nout[1] * nout[2];
        let (xv, wv) = (self.value(x), self.value(w));
        let mut gx = vec![0.0; xv.len()];
        let mut gw = vec![0.0; wv.len()];
        let gb: Vec<f64> = (0..co).map(|o| gy[o * vout..(o + 1) * vout].iter().sum()).collect();
        let ranges: [Vec<(usize, usize)>; 3] = std::array::from_fn(|a| (0..3).map(|k| conv_range(nin[a], nout[a], k)).collect());
        for o in 0..co {
            let go = &gy[o * vout..(o + 1) * vout];
            for c in 0..ci {
                let src = &xv[c * vin..(c + 1) * vin];
                let gsrc = &mut gx[c * vin..(c + 1) * vin];
                for kz in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let widx = ((o * ci + c) * 3 + kz) * 9 + ky * 3 + kx;
                            let wk = wv[widx];
                            let mut acc = 0.0;
                            let (zl, zh) = ranges[2][kz];
                            let (yl, yh) = ranges[1][ky];
                            let (xl, xh) = ranges[0][kx];
                            for oz in zl..zh {
                                let iz = 2 * oz + kz - 1;
                                for oy in yl..yh {
                                    let iy = 2 * oy + ky - 1;
                                    let drow = (oz * nout[1] + oy) * nout[0];
                                    let srow = (iz * nin[1] + iy) * nin[0];
                                    for ox in xl..xh {
                                        let d = go[drow + ox];
                                        let si = srow + 2 * ox + kx - 1;
                                        acc += d * src[si];
                                        gsrc[si] += wk * d;
                                    }
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }

    fn upsample_backward(&self, a: Var, factor: usize, gy: &[f64]) -> Vec<f64> {
        let s = self.shape(a);
        let (c, nin) = (s[0], [s[3], s[2], s[1]]);
        let nout = nin.map(|n| n * factor);
        let tx: Vec<_> = (0..nout[0]).map(|i| taps(i, factor, nin[0])).collect();
        let ty: Vec<_> = (0..nout[1]).map(|i| taps(i, factor, nin[1])).collect();
        let tz: Vec<_> = (0..nout[2]).map(|i| taps(i, factor, nin[2])).collect();
        let (vin, vout) = (nin.iter().product::<usize>(), nout.iter().product::<usize>());
        let mut gx = vec![0.0; c * vin];
        for ch in 0..c {
            let dst = &mut gx[ch * vin..(ch + 1) * vin];
            for z in 0..nout[2] {
                for y in 0..nout[1] {
                    for x in 0..nout[0] {
                        let d = gy[ch * vout + (z * nout[1] + y) * nout[0] + x];
                        for &(iz, wz) in &tz[z] {
                            for &(iy, wy) in &ty[y] {
                                for &(ix, wx) in &tx[x] {
                                    dst[(iz * nin[1] + iy) * nin[0] + ix] += wz * wy * wx * d;
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += s * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}
