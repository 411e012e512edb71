//! Conditional 1D U-Net noise predictor over `[N, 2, L]` trajectories.

use crate::error::{HerdError, Result};
use crate::nn::layers::{film, film_backward, silu, silu_backward, timestep_embedding, Conv, ConvTranspose, GroupNorm, Linear};
use crate::nn::{Grads, ParameterSet, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    /// Channel width per resolution level.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub groups: usize,
    pub time_dim: usize,
    pub obs_dim: usize,
    pub point_dim: usize,
    pub horizon: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { channels: vec![64, 128, 256], kernel: 5, groups: 8, time_dim: 64, obs_dim: 26, point_dim: 2, horizon: 32 }
    }
}

impl UnetConfig {
    pub fn cond_dim(&self) -> usize {
        self.time_dim + self.obs_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HerdError::InvalidConfig(m));
        if self.channels.len() < 2 {
            return bad("unet needs at least two levels".into());
        }
        if let Some(c) = self.channels.iter().find(|&&c| c % self.groups != 0) {
            return bad(format!("channel width {c} not divisible by {} groups", self.groups));
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd".into());
        }
        let down = 1usize << (self.channels.len() - 1);
        if self.horizon % down != 0 {
            return bad(format!("horizon {} not divisible by {down}", self.horizon));
        }
        Ok(())
    }
}

/// conv -> group norm -> SiLU
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv,
    norm: GroupNorm,
}

struct ConvBlockCache {
    x: Tensor,
    a: Tensor,
    b: Tensor,
}

impl ConvBlock {
    fn new(ps: &mut ParameterSet, name: &str, cin: usize, cout: usize, cfg: &UnetConfig, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv::new_1d(ps, &format!("{name}.conv"), cin, cout, cfg.kernel, 1, cfg.kernel / 2, rng),
            norm: GroupNorm::new(ps, &format!("{name}.norm"), cfg.groups, cout),
        }
    }

    fn forward(&self, ps: &ParameterSet, x: &Tensor) -> Result<(Tensor, ConvBlockCache)> {
        let a = self.conv.forward(ps, x)?;
        let b = self.norm.forward(ps, &a)?;
        Ok((silu(&b), ConvBlockCache { x: x.clone(), a, b }))
    }

    fn backward(&self, ps: &ParameterSet, g: &mut Grads, c: &ConvBlockCache, dy: &Tensor) -> Result<Tensor> {
        let db = silu_backward(&c.b, dy);
        let da = self.norm.backward(ps, g, &c.a, &db)?;
        self.conv.backward(ps, g, &c.x, &da)
    }
}

/// Two conv blocks with FiLM modulation between them and a residual path.
#[derive(Debug, Clone)]
struct ResBlock {
    block0: ConvBlock,
    block1: ConvBlock,
    cond: Linear,
    residual: Option<Conv>,
    cout: usize,
}

struct ResCache {
    x: Tensor,
    c0: ConvBlockCache,
    h1: Tensor,
    scale: Tensor,
    shift: Tensor,
    c1: ConvBlockCache,
}

fn split_film(fs: &Tensor, c: usize) -> (Tensor, Tensor) {
    let n = fs.shape[0];
    let mut scale = Vec::with_capacity(n * c);
    let mut shift = Vec::with_capacity(n * c);
    for i in 0..n {
        scale.extend_from_slice(&fs.data[i * 2 * c..i * 2 * c + c]);
        shift.extend_from_slice(&fs.data[i * 2 * c + c..(i + 1) * 2 * c]);
    }
    (Tensor { shape: vec![n, c], data: scale }, Tensor { shape: vec![n, c], data: shift })
}

fn join_film(ds: &Tensor, db: &Tensor) -> Tensor {
    let (n, c) = (ds.shape[0], ds.shape[1]);
    let mut data = Vec::with_capacity(2 * n * c);
    for i in 0..n {
        data.extend_from_slice(&ds.data[i * c..(i + 1) * c]);
        data.extend_from_slice(&db.data[i * c..(i + 1) * c]);
    }
    Tensor { shape: vec![n, 2 * c], data }
}

impl ResBlock {
    fn new(ps: &mut ParameterSet, name: &str, cin: usize, cout: usize, cfg: &UnetConfig, rng: &mut impl Rng) -> Self {
        Self {
            block0: ConvBlock::new(ps, &format!("{name}.block0"), cin, cout, cfg, rng),
            block1: ConvBlock::new(ps, &format!("{name}.block1"), cout, cout, cfg, rng),
            cond: Linear::new(ps, &format!("{name}.film"), cfg.cond_dim(), 2 * cout, rng),
            residual: (cin != cout).then(|| Conv::new_1d(ps, &format!("{name}.residual"), cin, cout, 1, 1, 0, rng)),
            cout,
        }
    }

    /// `cond_act` is the already activated conditioning vector.
    fn forward(&self, ps: &ParameterSet, x: &Tensor, cond_act: &Tensor) -> Result<(Tensor, ResCache)> {
        let (h1, c0) = self.block0.forward(ps, x)?;
        let fs = self.cond.forward(ps, cond_act)?;
        let (scale, shift) = split_film(&fs, self.cout);
        let h2 = film(&h1, &scale, &shift)?;
        let (mut out, c1) = self.block1.forward(ps, &h2)?;
        match &self.residual {
            Some(r) => out.add_assign(&r.forward(ps, x)?)?,
            None => out.add_assign(x)?,
        }
        Ok((out, ResCache { x: x.clone(), c0, h1, scale, shift, c1 }))
    }

    /// Returns the input gradient; adds the conditioning gradient into `dcond`.
    fn backward(&self, ps: &ParameterSet, g: &mut Grads, c: &ResCache, cond_act: &Tensor, dcond: &mut Tensor, dy: &Tensor) -> Result<Tensor> {
        let dh2 = self.block1.backward(ps, g, &c.c1, dy)?;
        let (dh1, dscale, dshift) = film_backward(&c.h1, &c.scale, &c.shift, &dh2)?;
        let dfs = join_film(&dscale, &dshift);
        dcond.add_assign(&self.cond.backward(ps, g, cond_act, &dfs)?)?;
        let mut dx = self.block0.backward(ps, g, &c.c0, &dh1)?;
        match &self.residual {
            Some(r) => dx.add_assign(&r.backward(ps, g, &c.x, dy)?)?,
            None => dx.add_assign(dy)?,
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
struct Level {
    res: [ResBlock; 2],
    resample: Option<Resample>,
}

#[derive(Debug, Clone)]
enum Resample {
    Down(Conv),
    Up(ConvTranspose),
}

impl Resample {
    fn forward(&self, ps: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        match self {
            Resample::Down(c) => c.forward(ps, x),
            Resample::Up(c) => c.forward(ps, x),
        }
    }

    fn backward(&self, ps: &ParameterSet, g: &mut Grads, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        match self {
            Resample::Down(c) => c.backward(ps, g, x, dy),
            Resample::Up(c) => c.backward(ps, g, x, dy),
        }
    }
}

/// Noise predictor `eps(x_t, t, obs)`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: UnetConfig,
    pub params: ParameterSet,
    time1: Linear,
    time2: Linear,
    down: Vec<Level>,
    mid: [ResBlock; 2],
    up: Vec<Level>,
    final_block: ConvBlock,
    final_conv: Conv,
}

struct LevelCache {
    res: Vec<ResCache>,
    pre_resample: Tensor,
}

/// Activations of one forward pass.
pub struct DenoiserCache {
    temb_in: Tensor,
    t1: Tensor,
    t1_act: Tensor,
    cond: Tensor,
    cond_act: Tensor,
    down: Vec<LevelCache>,
    mid: Vec<ResCache>,
    up: Vec<LevelCache>,
    skip_widths: Vec<usize>,
    fb: ConvBlockCache,
    fb_out: Tensor,
}

impl Denoiser {
    pub fn new(cfg: UnetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParameterSet::new();
        let td = cfg.time_dim;
        let time1 = Linear::new(&mut ps, "time.0", td, 4 * td, rng);
        let time2 = Linear::new(&mut ps, "time.1", 4 * td, td, rng);
        let ch = &cfg.channels;
        let levels = ch.len();
        let mut down = Vec::with_capacity(levels);
        let mut cin = cfg.point_dim;
        for (i, &c) in ch.iter().enumerate() {
            let last = i + 1 == levels;
            down.push(Level {
                res: [
                    ResBlock::new(&mut ps, &format!("down{i}.res0"), cin, c, &cfg, rng),
                    ResBlock::new(&mut ps, &format!("down{i}.res1"), c, c, &cfg, rng),
                ],
                resample: (!last).then(|| Resample::Down(Conv::new_1d(&mut ps, &format!("down{i}.down"), c, c, 3, 2, 1, rng))),
            });
            cin = c;
        }
        let top = ch[levels - 1];
        let mid = [
            ResBlock::new(&mut ps, "mid.res0", top, top, &cfg, rng),
            ResBlock::new(&mut ps, "mid.res1", top, top, &cfg, rng),
        ];
        // each up level consumes the skip of the matching down level and
        // upsamples once, mirroring the down path
        let mut up = Vec::with_capacity(levels - 1);
        let mut cur = top;
        for i in (0..levels - 1).rev() {
            let skip = ch[i + 1];
            let c = ch[i];
            up.push(Level {
                res: [
                    ResBlock::new(&mut ps, &format!("up{i}.res0"), cur + skip, c, &cfg, rng),
                    ResBlock::new(&mut ps, &format!("up{i}.res1"), c, c, &cfg, rng),
                ],
                resample: Some(Resample::Up(ConvTranspose::new_1d(&mut ps, &format!("up{i}.up"), c, c, 4, 2, 1, rng))),
            });
            cur = c;
        }
        let final_block = ConvBlock::new(&mut ps, "final.block", ch[0], ch[0], &cfg, rng);
        let final_conv = Conv::new_1d(&mut ps, "final.conv", ch[0], cfg.point_dim, 1, 1, 0, rng);
        Ok(Self { cfg, params: ps, time1, time2, down, mid, up, final_block, final_conv })
    }

    fn check_inputs(&self, x: &Tensor, ts: &[usize], obs: &Tensor) -> Result<usize> {
        let n = x.shape.first().copied().unwrap_or(0);
        if x.shape != [n, self.cfg.point_dim, self.cfg.horizon] {
            return Err(HerdError::shape("denoiser", format!("trajectory {:?}", x.shape)));
        }
        if ts.len() != n || obs.shape != [n, self.cfg.obs_dim] {
            return Err(HerdError::shape("denoiser", format!("{} timesteps, obs {:?} for batch {n}", ts.len(), obs.shape)));
        }
        Ok(n)
    }

    pub fn forward_cached(&self, x: &Tensor, ts: &[usize], obs: &Tensor) -> Result<(Tensor, DenoiserCache)> {
        let n = self.check_inputs(x, ts, obs)?;
        let ps = &self.params;
        let tf: Vec<f32> = ts.iter().map(|&t| t as f32).collect();
        let temb_in = timestep_embedding(&tf, self.cfg.time_dim);
        let t1 = self.time1.forward(ps, &temb_in)?;
        let t1_act = silu(&t1);
        let temb = self.time2.forward(ps, &t1_act)?;
        let cd = self.cfg.cond_dim();
        let mut cond_data = Vec::with_capacity(n * cd);
        for i in 0..n {
            cond_data.extend_from_slice(&temb.data[i * self.cfg.time_dim..(i + 1) * self.cfg.time_dim]);
            cond_data.extend_from_slice(&obs.data[i * self.cfg.obs_dim..(i + 1) * self.cfg.obs_dim]);
        }
        let cond = Tensor { shape: vec![n, cd], data: cond_data };
        let cond_act = silu(&cond);

        let mut h = x.clone();
        let mut skips = Vec::new();
        let mut down_c = Vec::with_capacity(self.down.len());
        for lvl in &self.down {
            let mut rc = Vec::with_capacity(2);
            for rb in &lvl.res {
                let (o, c) = rb.forward(ps, &h, &cond_act)?;
                rc.push(c);
                h = o;
            }
            skips.push(h.clone());
            let pre = h.clone();
            if let Some(rs) = &lvl.resample {
                h = rs.forward(ps, &h)?;
            }
            down_c.push(LevelCache { res: rc, pre_resample: pre });
        }
        let mut mid_c = Vec::with_capacity(2);
        for rb in &self.mid {
            let (o, c) = rb.forward(ps, &h, &cond_act)?;
            mid_c.push(c);
            h = o;
        }
        let mut up_c = Vec::with_capacity(self.up.len());
        let mut skip_widths = Vec::with_capacity(self.up.len());
        for lvl in &self.up {
            let skip = skips.pop().expect("one skip per up level");
            skip_widths.push(h.shape[1]);
            h = Tensor::concat_channels(&h, &skip)?;
            let mut rc = Vec::with_capacity(2);
            for rb in &lvl.res {
                let (o, c) = rb.forward(ps, &h, &cond_act)?;
                rc.push(c);
                h = o;
            }
            let pre = h.clone();
            if let Some(rs) = &lvl.resample {
                h = rs.forward(ps, &h)?;
            }
            up_c.push(LevelCache { res: rc, pre_resample: pre });
        }
        let (fb_out, fb) = self.final_block.forward(ps, &h)?;
        let y = self.final_conv.forward(ps, &fb_out)?;
        Ok((y, DenoiserCache { temb_in, t1, t1_act, cond, cond_act, down: down_c, mid: mid_c, up: up_c, skip_widths, fb, fb_out }))
    }

    pub fn forward(&self, x: &Tensor, ts: &[usize], obs: &Tensor) -> Result<Tensor> {
        self.forward_cached(x, ts, obs).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// the noised trajectory input.
    pub fn backward(&self, g: &mut Grads, c: &DenoiserCache, dy: &Tensor) -> Result<Tensor> {
        let ps = &self.params;
        let mut dcond = Tensor::zeros(&c.cond.shape);
        let dfb = self.final_conv.backward(ps, g, &c.fb_out, dy)?;
        let mut dh = self.final_block.backward(ps, g, &c.fb, &dfb)?;

        // dskips[j] belongs to up level len-1-j
        let mut dskips: Vec<Tensor> = Vec::with_capacity(self.up.len());
        for (k, lvl) in self.up.iter().enumerate().rev() {
            let lc = &c.up[k];
            if let Some(rs) = &lvl.resample {
                dh = rs.backward(ps, g, &lc.pre_resample, &dh)?;
            }
            for (rb, rc) in lvl.res.iter().zip(&lc.res).rev() {
                dh = rb.backward(ps, g, rc, &c.cond_act, &mut dcond, &dh)?;
            }
            let (dprev, dskip) = Tensor::split_channels(&dh, c.skip_widths[k])?;
            dskips.push(dskip);
            dh = dprev;
        }
        for (rb, rc) in self.mid.iter().zip(&c.mid).rev() {
            dh = rb.backward(ps, g, rc, &c.cond_act, &mut dcond, &dh)?;
        }
        let levels = self.down.len();
        for (i, lvl) in self.down.iter().enumerate().rev() {
            let lc = &c.down[i];
            if let Some(rs) = &lvl.resample {
                dh = rs.backward(ps, g, &lc.pre_resample, &dh)?;
            }
            // up level k read the skip of down level levels-1-k
            if i >= 1 {
                let k = levels - 1 - i;
                dh.add_assign(&dskips[self.up.len() - 1 - k])?;
            }
            for (rb, rc) in lvl.res.iter().zip(&lc.res).rev() {
                dh = rb.backward(ps, g, rc, &c.cond_act, &mut dcond, &dh)?;
            }
        }

        let dcond_pre = silu_backward(&c.cond, &dcond);
        let n = c.cond.shape[0];
        let (td, cd) = (self.cfg.time_dim, self.cfg.cond_dim());
        let mut dtemb = Vec::with_capacity(n * td);
        for i in 0..n {
            dtemb.extend_from_slice(&dcond_pre.data[i * cd..i * cd + td]);
        }
        let dtemb = Tensor { shape: vec![n, td], data: dtemb };
        let dt1_act = self.time2.backward(ps, g, &c.t1_act, &dtemb)?;
        let dt1 = silu_backward(&c.t1, &dt1_act);
        self.time1.backward(ps, g, &c.temb_in, &dt1)?;
        Ok(dh)
    }
}
