use super::{ArchConfig, PolicyParams, Sequence, SourceEncoding, BOS, PAD};

/// Offsets of each parameter block in the flat vector.
///
/// `w1` is stored input-major (`[input][hidden]`), `w2` hidden-major
/// (`[hidden][vocab]`).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub embed: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub total: usize,
    pub input_dim: usize,
    pub src_width: usize,
    e: usize,
    h: usize,
    v: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig, vocab_len: usize) -> Self {
        let (e, h, v) = (arch.embedding_dim, arch.hidden_dim, vocab_len);
        let src_width = match arch.source_encoding {
            SourceEncoding::Positional => arch.max_source_len * e,
            SourceEncoding::Mean => e,
        };
        let input_dim = src_width + arch.context_window * e;
        let embed = 0;
        let w1 = embed + v * e;
        let b1 = w1 + input_dim * h;
        let w2 = b1 + h;
        let b2 = w2 + h * v;
        Layout { embed, w1, b1, w2, b2, total: b2 + v, input_dim, src_width, e, h, v }
    }

    pub fn embed_len(&self) -> usize {
        self.v * self.e
    }
}

pub(crate) struct Encoded {
    x: Vec<f64>,
    z: Vec<f64>,
}

pub(crate) struct StepCache {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    hidden: Vec<f64>,
    window: Vec<usize>,
}

pub(crate) struct Net<'a> {
    p: &'a [f64],
    l: Layout,
    arch: ArchConfig,
}

impl<'a> Net<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        Net { p: &params.values, l: params.layout(), arch: params.arch }
    }

    fn emb(&self, tok: usize) -> &[f64] {
        let at = self.l.embed + tok * self.l.e;
        &self.p[at..at + self.l.e]
    }

    pub fn encode_source(&self, source: &[usize]) -> Encoded {
        let (e, h) = (self.l.e, self.l.h);
        let mut x = vec![0.0; self.l.src_width];
        match self.arch.source_encoding {
            SourceEncoding::Positional => {
                for slot in 0..self.arch.max_source_len {
                    let tok = source.get(slot).copied().unwrap_or(PAD);
                    x[slot * e..(slot + 1) * e].copy_from_slice(self.emb(tok));
                }
            }
            SourceEncoding::Mean => {
                if !source.is_empty() {
                    let inv = 1.0 / source.len() as f64;
                    for &tok in source {
                        for (xi, v) in x.iter_mut().zip(self.emb(tok)) {
                            *xi += v * inv;
                        }
                    }
                }
            }
        }
        let mut z = vec![0.0; h];
        for (r, &xr) in x.iter().enumerate() {
            let row = &self.p[self.l.w1 + r * h..self.l.w1 + (r + 1) * h];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += xr * w;
            }
        }
        Encoded { x, z }
    }

    fn window(&self, prefix: &[usize]) -> Vec<usize> {
        let w = self.arch.context_window;
        let mut win = vec![BOS; w];
        let take = prefix.len().min(w);
        win[w - take..].copy_from_slice(&prefix[prefix.len() - take..]);
        win
    }

    pub fn step(&self, src: &Encoded, prefix: &[usize]) -> StepCache {
        let (e, h, v) = (self.l.e, self.l.h, self.l.v);
        let window = self.window(prefix);
        let mut z: Vec<f64> = self.p[self.l.b1..self.l.b1 + h].iter().zip(&src.z).map(|(b, s)| b + s).collect();
        for (slot, &tok) in window.iter().enumerate() {
            for (d, &xd) in self.emb(tok).iter().enumerate() {
                let r = self.l.src_width + slot * e + d;
                let row = &self.p[self.l.w1 + r * h..self.l.w1 + (r + 1) * h];
                for (zj, w) in z.iter_mut().zip(row) {
                    *zj += xd * w;
                }
            }
        }
        let hidden: Vec<f64> = z.iter().map(|x| x.tanh()).collect();
        let mut logits = self.p[self.l.b2..self.l.b2 + v].to_vec();
        for (j, &a) in hidden.iter().enumerate() {
            let row = &self.p[self.l.w2 + j * v..self.l.w2 + (j + 1) * v];
            for (lk, w) in logits.iter_mut().zip(row) {
                *lk += a * w;
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs = logits.iter().map(|l| l - lse).collect();
        StepCache { logits, log_probs, hidden, window }
    }

    pub fn forward(&self, source: &[usize], output: &[usize]) -> (Vec<f64>, Vec<StepCache>) {
        let src = self.encode_source(source);
        let caches = (0..output.len()).map(|t| self.step(&src, &output[..t])).collect();
        (src.x, caches)
    }

    /// Accumulates Σ_t weights[t] · ∂ log π(y_t | ·) / ∂θ into `grad`.
    pub fn backward(&self, seq: &Sequence, src_x: &[f64], caches: &[StepCache], weights: &[f64], grad: &mut [f64]) {
        let (e, h, v) = (self.l.e, self.l.h, self.l.v);
        let l = self.l;
        let mut dz_src = vec![0.0; h];
        let mut any = false;
        let mut dlogits = vec![0.0; v];
        let mut dz = vec![0.0; h];
        for ((c, &y), &wt) in caches.iter().zip(&seq.output).zip(weights) {
            if wt == 0.0 {
                continue;
            }
            any = true;
            for (k, (dl, lp)) in dlogits.iter_mut().zip(&c.log_probs).enumerate() {
                let onehot = if k == y { 1.0 } else { 0.0 };
                *dl = wt * (onehot - lp.exp());
            }
            for (g, dl) in grad[l.b2..l.b2 + v].iter_mut().zip(&dlogits) {
                *g += dl;
            }
            for (j, &a) in c.hidden.iter().enumerate() {
                let row = &self.p[l.w2 + j * v..l.w2 + (j + 1) * v];
                let grow = &mut grad[l.w2 + j * v..l.w2 + (j + 1) * v];
                let mut da = 0.0;
                for ((g, w), dl) in grow.iter_mut().zip(row).zip(&dlogits) {
                    *g += a * dl;
                    da += w * dl;
                }
                dz[j] = da * (1.0 - a * a);
            }
            for ((g, s), d) in grad[l.b1..l.b1 + h].iter_mut().zip(dz_src.iter_mut()).zip(&dz) {
                *g += d;
                *s += d;
            }
            for (slot, &tok) in c.window.iter().enumerate() {
                for d in 0..e {
                    let x = self.p[l.embed + tok * e + d];
                    let r = l.src_width + slot * e + d;
                    let dx = self.row_grad(r, x, &dz, grad);
                    grad[l.embed + tok * e + d] += dx;
                }
            }
        }
        if !any {
            return;
        }
        let source = &seq.source;
        for (r, &x) in src_x.iter().enumerate() {
            let dx = self.row_grad(r, x, &dz_src, grad);
            match self.arch.source_encoding {
                SourceEncoding::Positional => {
                    let tok = source.get(r / e).copied().unwrap_or(PAD);
                    grad[l.embed + tok * e + r % e] += dx;
                }
                SourceEncoding::Mean => {
                    let inv = 1.0 / source.len().max(1) as f64;
                    for &tok in source {
                        grad[l.embed + tok * e + r] += dx * inv;
                    }
                }
            }
        }
    }

    /// Adds `x · dz` to row `r` of the W1 gradient; returns `W1[r] · dz`.
    fn row_grad(&self, r: usize, x: f64, dz: &[f64], grad: &mut [f64]) -> f64 {
        let h = self.l.h;
        let at = self.l.w1 + r * h;
        let row = &self.p[at..at + h];
        let grow = &mut grad[at..at + h];
        let mut dx = 0.0;
        for ((g, w), d) in grow.iter_mut().zip(row).zip(dz) {
            *g += x * d;
            dx += w * d;
        }
        dx
    }
}
