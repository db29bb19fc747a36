//! Small conditional U-Net denoiser with a hand-written backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvCache, GroupNormCache};
use super::real::Real;
use crate::error::{Error, Result};

/// Channel widths and embedding sizes of the denoiser.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Widths of the full- and half-resolution stages.
    pub widths: [usize; 2],
    pub groups: usize,
    pub time_dim: usize,
    pub time_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: super::cond::STACK_CHANNELS,
            out_channels: 3,
            widths: [32, 64],
            groups: 8,
            time_dim: 64,
            time_hidden: 128,
        }
    }
}

impl NetConfig {
    /// Reduced network used for finite-difference checks.
    pub fn micro() -> Self {
        NetConfig {
            widths: [16, 16],
            time_dim: 16,
            time_hidden: 16,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.groups > 0
            && self.widths.iter().all(|w| *w > 0 && w % self.groups == 0)
            && self.time_dim >= 2
            && self.time_dim.is_multiple_of(2)
            && self.time_hidden > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad network config {self:?}")))
        }
    }
}

/// Named tensors with shapes; the flat storage order is fixed by [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            shapes: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let n = shape.iter().product();
        self.names.push(name);
        self.shapes.push(shape);
        self.tensors.push(vec![T::zero(); n]);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| U::lit(v.f64())).collect())
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvRef {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvRef {
    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormRef {
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearRef {
    pub weight: usize,
    pub bias: usize,
    pub fin: usize,
    pub fout: usize,
}

/// Residual block: norm, SiLU, conv, norm, time modulation, SiLU, conv, plus skip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRef {
    pub norm1: NormRef,
    pub conv1: ConvRef,
    pub norm2: NormRef,
    pub conv2: ConvRef,
    pub skip: Option<ConvRef>,
    /// Offset of this block's `[scale; shift]` in the time-MLP output.
    pub film: usize,
    pub cin: usize,
    pub cout: usize,
}

/// Parameter indices of every layer.
#[derive(Clone, Debug)]
pub struct Layout {
    pub stem: ConvRef,
    pub enc1: BlockRef,
    pub enc2: BlockRef,
    pub mid: BlockRef,
    pub dec2: BlockRef,
    pub dec1: BlockRef,
    pub head_norm: NormRef,
    pub head: ConvRef,
    pub time1: LinearRef,
    pub time2: LinearRef,
    /// Every convolution, in parameter order.
    pub convs: Vec<ConvRef>,
    pub groups: usize,
}

struct Builder<T> {
    params: ParamSet<T>,
    convs: Vec<ConvRef>,
    film: usize,
}

impl<T: Real> Builder<T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvRef {
        let weight = self
            .params
            .push(format!("{name}.weight"), vec![cout, cin, k, k]);
        let bias = self.params.push(format!("{name}.bias"), vec![cout]);
        let c = ConvRef {
            weight,
            bias,
            cin,
            cout,
            k,
        };
        self.convs.push(c);
        c
    }

    fn norm(&mut self, name: &str, channels: usize) -> NormRef {
        let gamma = self.params.push(format!("{name}.gamma"), vec![channels]);
        let beta = self.params.push(format!("{name}.beta"), vec![channels]);
        NormRef {
            gamma,
            beta,
            channels,
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) -> LinearRef {
        let weight = self.params.push(format!("{name}.weight"), vec![fout, fin]);
        let bias = self.params.push(format!("{name}.bias"), vec![fout]);
        LinearRef {
            weight,
            bias,
            fin,
            fout,
        }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize) -> BlockRef {
        let norm1 = self.norm(&format!("{name}.norm1"), cin);
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3);
        let norm2 = self.norm(&format!("{name}.norm2"), cout);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, 3);
        let skip = (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1));
        let film = self.film;
        self.film += 2 * cout;
        BlockRef {
            norm1,
            conv1,
            norm2,
            conv2,
            skip,
            film,
            cin,
            cout,
        }
    }
}

/// Build the parameter layout for `config`, with all tensors zeroed.
pub fn build_layout<T: Real>(config: &NetConfig) -> (Layout, ParamSet<T>) {
    let [w1, w2] = config.widths;
    let mut b = Builder {
        params: ParamSet::new(),
        convs: Vec::new(),
        film: 0,
    };
    let stem = b.conv("stem", config.in_channels, w1, 3);
    let enc1 = b.block("enc1", w1, w1);
    let enc2 = b.block("enc2", w1, w2);
    let mid = b.block("mid", w2, w2);
    let dec2 = b.block("dec2", w2 + w2, w2);
    let dec1 = b.block("dec1", w2 + w1, w1);
    let head_norm = b.norm("head.norm", w1);
    let head = b.conv("head.conv", w1, config.out_channels, 3);
    let time1 = b.linear("time.fc1", config.time_dim, config.time_hidden);
    let time2 = b.linear("time.fc2", config.time_hidden, b.film);
    let layout = Layout {
        stem,
        enc1,
        enc2,
        mid,
        dec2,
        dec1,
        head_norm,
        head,
        time1,
        time2,
        convs: b.convs,
        groups: config.groups,
    };
    (layout, b.params)
}

/// Pixel-space conditional denoiser: configuration, layout and weights.
#[derive(Clone, Debug)]
pub struct Denoiser<T> {
    pub config: NetConfig,
    pub layout: Layout,
    pub params: ParamSet<T>,
}

impl<T: Real> Denoiser<T> {
    /// Seeded initialization: unit-variance fan-in scaling for convolutions and
    /// linear layers, damped residual branches and head, unit norm gains.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, mut params) = build_layout::<T>(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut ParamSet<T>, idx: usize, std: f64| {
            let normal = Normal::new(0.0, std).unwrap();
            for v in params.tensors[idx].iter_mut() {
                *v = T::lit(normal.sample(&mut rng));
            }
        };
        let damped = |c: &ConvRef| c.weight == layout.head.weight;
        for c in &layout.convs {
            let std = (1.0 / c.fan_in() as f64).sqrt() * if damped(c) { 0.1 } else { 1.0 };
            fill(&mut params, c.weight, std);
        }
        for blk in [
            &layout.enc1,
            &layout.enc2,
            &layout.mid,
            &layout.dec2,
            &layout.dec1,
        ] {
            let std = (1.0 / blk.conv2.fan_in() as f64).sqrt() * 0.2;
            fill(&mut params, blk.conv2.weight, std);
            for n in [blk.norm1, blk.norm2] {
                params.tensors[n.gamma]
                    .iter_mut()
                    .for_each(|g| *g = T::one());
            }
        }
        params.tensors[layout.head_norm.gamma]
            .iter_mut()
            .for_each(|g| *g = T::one());
        fill(
            &mut params,
            layout.time1.weight,
            (1.0 / layout.time1.fin as f64).sqrt(),
        );
        fill(&mut params, layout.time2.weight, 0.02);
        Ok(Denoiser {
            config: config.clone(),
            layout,
            params,
        })
    }

    /// Rebuild from stored tensors, checking names and shapes against the layout.
    pub fn from_params(config: &NetConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let (layout, fresh) = build_layout::<T>(config);
        if fresh.names != params.names || fresh.shapes != params.shapes {
            return Err(Error::Shape(
                "parameter names or shapes do not match the network layout".into(),
            ));
        }
        if params
            .tensors
            .iter()
            .zip(&params.shapes)
            .any(|(t, s)| t.len() != s.iter().product::<usize>())
        {
            return Err(Error::Shape(
                "tensor length does not match its shape".into(),
            ));
        }
        Ok(Denoiser {
            config: config.clone(),
            layout,
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, input: &[T], h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(4) || !w.is_multiple_of(4) || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "denoiser needs sides divisible by 4, got {w}x{h}"
            )));
        }
        if input.len() != self.config.in_channels * h * w {
            return Err(Error::Shape(format!(
                "expected {} input channels at {w}x{h}, got {} values",
                self.config.in_channels,
                input.len()
            )));
        }
        Ok(())
    }

    /// Predict the clean target from a `C × h × w` conditioning stack at timestep `t`.
    pub fn predict(&self, input: &[T], h: usize, w: usize, t: f64) -> Result<Vec<T>> {
        self.check_input(input, h, w)?;
        Ok(forward(&self.layout, &self.params, input, h, w, t).0)
    }

    /// Forward pass that keeps the activations needed by [`Denoiser::backward`].
    pub fn forward_cached(
        &self,
        input: &[T],
        h: usize,
        w: usize,
        t: f64,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(input, h, w)?;
        Ok(forward(&self.layout, &self.params, input, h, w, t))
    }

    /// Accumulate parameter gradients of `⟨dout, output⟩` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &[T], grads: &mut [Vec<T>]) {
        backward(&self.layout, &self.params, cache, dout, grads)
    }
}

/// Sinusoidal embedding of a (possibly fractional) timestep.
pub fn timestep_embedding<T: Real>(t: f64, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut e = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        e[i] = T::lit((t * freq).sin());
        e[i + half] = T::lit((t * freq).cos());
    }
    e
}

pub struct BlockCache<T> {
    n1: GroupNormCache<T>,
    h1: Vec<T>,
    c1: ConvCache<T>,
    n2: GroupNormCache<T>,
    h2: Vec<T>,
    m: Vec<T>,
    c2: ConvCache<T>,
    skip: Option<ConvCache<T>>,
    h: usize,
    w: usize,
}

/// Activations of one forward pass.
pub struct ForwardCache<T> {
    h: usize,
    w: usize,
    emb: Vec<T>,
    t_pre: Vec<T>,
    t_act: Vec<T>,
    film: Vec<T>,
    stem: ConvCache<T>,
    enc1: BlockCache<T>,
    enc2: BlockCache<T>,
    mid: BlockCache<T>,
    dec2: BlockCache<T>,
    dec1: BlockCache<T>,
    head_n: GroupNormCache<T>,
    head_pre: Vec<T>,
    head: ConvCache<T>,
}

fn conv<T: Real>(
    p: &ParamSet<T>,
    c: &ConvRef,
    x: &[T],
    h: usize,
    w: usize,
) -> (Vec<T>, ConvCache<T>) {
    ops::conv_forward(
        &p.tensors[c.weight],
        &p.tensors[c.bias],
        x,
        c.cin,
        c.cout,
        h,
        w,
        c.k,
    )
}

fn norm<T: Real>(
    p: &ParamSet<T>,
    n: &NormRef,
    groups: usize,
    x: &[T],
    hw: usize,
) -> (Vec<T>, GroupNormCache<T>) {
    ops::group_norm_forward(
        x,
        &p.tensors[n.gamma],
        &p.tensors[n.beta],
        n.channels,
        groups,
        hw,
    )
}

fn block_forward<T: Real>(
    p: &ParamSet<T>,
    b: &BlockRef,
    groups: usize,
    x: &[T],
    film: &[T],
    h: usize,
    w: usize,
) -> (Vec<T>, BlockCache<T>) {
    let hw = h * w;
    let (g1, n1) = norm(p, &b.norm1, groups, x, hw);
    let h1 = g1;
    let a1 = ops::silu(&h1);
    let (y1, c1) = conv(p, &b.conv1, &a1, h, w);
    let (h2, n2) = norm(p, &b.norm2, groups, &y1, hw);
    let scale = &film[b.film..b.film + b.cout];
    let shift = &film[b.film + b.cout..b.film + 2 * b.cout];
    let mut m = h2.clone();
    for c in 0..b.cout {
        let (s, o) = (T::one() + scale[c], shift[c]);
        m[c * hw..(c + 1) * hw]
            .iter_mut()
            .for_each(|v| *v = *v * s + o);
    }
    let a2 = ops::silu(&m);
    let (mut y, c2) = conv(p, &b.conv2, &a2, h, w);
    let skip = match &b.skip {
        Some(s) => {
            let (sy, sc) = conv(p, s, x, h, w);
            y.iter_mut().zip(&sy).for_each(|(a, b)| *a = *a + *b);
            Some(sc)
        }
        None => {
            y.iter_mut().zip(x).for_each(|(a, b)| *a = *a + *b);
            None
        }
    };
    (
        y,
        BlockCache {
            n1,
            h1,
            c1,
            n2,
            h2,
            m,
            c2,
            skip,
            h,
            w,
        },
    )
}

fn block_backward<T: Real>(
    p: &ParamSet<T>,
    b: &BlockRef,
    groups: usize,
    cache: &BlockCache<T>,
    dy: &[T],
    film: &[T],
    dfilm: &mut [T],
    grads: &mut [Vec<T>],
) -> Vec<T> {
    let (h, w) = (cache.h, cache.w);
    let hw = h * w;
    let c2 = &b.conv2;
    let da2 = conv_backward(p, c2, &cache.c2, dy, h, w, grads, true).unwrap();
    let mut dm = ops::silu_backward(&cache.m, &da2);
    for c in 0..b.cout {
        let s = T::one() + film[b.film + c];
        let span = c * hw..(c + 1) * hw;
        let dscale: T = dm[span.clone()]
            .iter()
            .zip(&cache.h2[span.clone()])
            .map(|(d, v)| *d * *v)
            .sum();
        let dshift: T = dm[span.clone()].iter().copied().sum();
        dfilm[b.film + c] = dfilm[b.film + c] + dscale;
        dfilm[b.film + b.cout + c] = dfilm[b.film + b.cout + c] + dshift;
        dm[span].iter_mut().for_each(|v| *v = *v * s);
    }
    let dy1 = norm_backward(p, &b.norm2, groups, &cache.n2, &dm, hw, grads);
    let da1 = conv_backward(p, &b.conv1, &cache.c1, &dy1, h, w, grads, true).unwrap();
    let dh1 = ops::silu_backward(&cache.h1, &da1);
    let mut dx = norm_backward(p, &b.norm1, groups, &cache.n1, &dh1, hw, grads);
    match (&b.skip, &cache.skip) {
        (Some(s), Some(sc)) => {
            let ds = conv_backward(p, s, sc, dy, h, w, grads, true).unwrap();
            dx.iter_mut().zip(&ds).for_each(|(a, b)| *a = *a + *b);
        }
        _ => dx.iter_mut().zip(dy).for_each(|(a, b)| *a = *a + *b),
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    p: &ParamSet<T>,
    c: &ConvRef,
    cache: &ConvCache<T>,
    dy: &[T],
    h: usize,
    w: usize,
    grads: &mut [Vec<T>],
    need_dx: bool,
) -> Option<Vec<T>> {
    let (dw, db) = two_mut(grads, c.weight, c.bias);
    ops::conv_backward(
        &p.tensors[c.weight],
        cache,
        dy,
        c.cin,
        c.cout,
        h,
        w,
        c.k,
        Some(dw),
        Some(db),
        need_dx,
    )
}

fn norm_backward<T: Real>(
    p: &ParamSet<T>,
    n: &NormRef,
    groups: usize,
    cache: &GroupNormCache<T>,
    dy: &[T],
    hw: usize,
    grads: &mut [Vec<T>],
) -> Vec<T> {
    let (dg, db) = two_mut(grads, n.gamma, n.beta);
    ops::group_norm_backward(
        cache,
        &p.tensors[n.gamma],
        dy,
        n.channels,
        groups,
        hw,
        Some(dg),
        Some(db),
    )
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn concat<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn forward<T: Real>(
    layout: &Layout,
    p: &ParamSet<T>,
    input: &[T],
    h: usize,
    w: usize,
    t: f64,
) -> (Vec<T>, ForwardCache<T>) {
    let groups = layout.groups;
    let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
    let emb = timestep_embedding::<T>(t, layout.time1.fin);
    let t_pre = ops::linear_forward(
        &p.tensors[layout.time1.weight],
        &p.tensors[layout.time1.bias],
        &emb,
    );
    let t_act = ops::silu(&t_pre);
    let film = ops::linear_forward(
        &p.tensors[layout.time2.weight],
        &p.tensors[layout.time2.bias],
        &t_act,
    );

    let (s, stem) = conv(p, &layout.stem, input, h, w);
    let (e1, enc1) = block_forward(p, &layout.enc1, groups, &s, &film, h, w);
    let p1 = ops::avg_pool2(&e1, layout.enc1.cout, h, w);
    let (e2, enc2) = block_forward(p, &layout.enc2, groups, &p1, &film, h2, w2);
    let p2 = ops::avg_pool2(&e2, layout.enc2.cout, h2, w2);
    let (m, mid) = block_forward(p, &layout.mid, groups, &p2, &film, h4, w4);
    let u2 = ops::upsample2(&m, layout.mid.cout, h4, w4);
    let (d2, dec2) = block_forward(p, &layout.dec2, groups, &concat(&u2, &e2), &film, h2, w2);
    let u1 = ops::upsample2(&d2, layout.dec2.cout, h2, w2);
    let (d1, dec1) = block_forward(p, &layout.dec1, groups, &concat(&u1, &e1), &film, h, w);
    let (head_pre, head_n) = norm(p, &layout.head_norm, groups, &d1, h * w);
    let (out, head) = conv(p, &layout.head, &ops::silu(&head_pre), h, w);
    (
        out,
        ForwardCache {
            h,
            w,
            emb,
            t_pre,
            t_act,
            film,
            stem,
            enc1,
            enc2,
            mid,
            dec2,
            dec1,
            head_n,
            head_pre,
            head,
        },
    )
}

fn backward<T: Real>(
    layout: &Layout,
    p: &ParamSet<T>,
    c: &ForwardCache<T>,
    dout: &[T],
    grads: &mut [Vec<T>],
) {
    let groups = layout.groups;
    let (h, w) = (c.h, c.w);
    let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
    let mut dfilm = vec![T::zero(); c.film.len()];

    let da = conv_backward(p, &layout.head, &c.head, dout, h, w, grads, true).unwrap();
    let dpre = ops::silu_backward(&c.head_pre, &da);
    let dd1 = norm_backward(p, &layout.head_norm, groups, &c.head_n, &dpre, h * w, grads);

    let dcat1 = block_backward(
        p,
        &layout.dec1,
        groups,
        &c.dec1,
        &dd1,
        &c.film,
        &mut dfilm,
        grads,
    );
    let split1 = layout.dec2.cout * h * w;
    let du1 = &dcat1[..split1];
    let mut de1 = dcat1[split1..].to_vec();
    let dd2 = ops::upsample2_backward(du1, layout.dec2.cout, h2, w2);

    let dcat2 = block_backward(
        p,
        &layout.dec2,
        groups,
        &c.dec2,
        &dd2,
        &c.film,
        &mut dfilm,
        grads,
    );
    let split2 = layout.mid.cout * h2 * w2;
    let du2 = &dcat2[..split2];
    let mut de2 = dcat2[split2..].to_vec();
    let dm = ops::upsample2_backward(du2, layout.mid.cout, h4, w4);

    let dp2 = block_backward(
        p,
        &layout.mid,
        groups,
        &c.mid,
        &dm,
        &c.film,
        &mut dfilm,
        grads,
    );
    let pooled = ops::avg_pool2_backward(&dp2, layout.enc2.cout, h2, w2);
    de2.iter_mut().zip(&pooled).for_each(|(a, b)| *a = *a + *b);

    let dp1 = block_backward(
        p,
        &layout.enc2,
        groups,
        &c.enc2,
        &de2,
        &c.film,
        &mut dfilm,
        grads,
    );
    let pooled = ops::avg_pool2_backward(&dp1, layout.enc1.cout, h, w);
    de1.iter_mut().zip(&pooled).for_each(|(a, b)| *a = *a + *b);

    let ds = block_backward(
        p,
        &layout.enc1,
        groups,
        &c.enc1,
        &de1,
        &c.film,
        &mut dfilm,
        grads,
    );
    conv_backward(p, &layout.stem, &c.stem, &ds, h, w, grads, false);

    let t2 = &layout.time2;
    let (dw, db) = two_mut(grads, t2.weight, t2.bias);
    let dact = ops::linear_backward(&p.tensors[t2.weight], &c.t_act, &dfilm, Some(dw), Some(db));
    let dpre = ops::silu_backward(&c.t_pre, &dact);
    let t1 = &layout.time1;
    let (dw, db) = two_mut(grads, t1.weight, t1.bias);
    ops::linear_backward(&p.tensors[t1.weight], &c.emb, &dpre, Some(dw), Some(db));
}
