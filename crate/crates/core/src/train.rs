//! Training loop, evaluation and the per-step forward pass.

use ocrf_diff::{Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Goal, RunConfig, ViewSelect};
use crate::decoder::{decode_gaussians, decode_nerf, init_decoder, voxel_features};
use crate::error::{Error, Result};
use crate::hoa::{
    apply_attention, bev_from_voxels, bev_mask_head, init_bev_head, init_hoa, mask_iou, mask_loss, multiscale_hsa,
    opacity_fusion, OpacitySource, QuerySource,
};
use crate::optim::Adam;
use crate::params::{Binder, ParamStore, Tensor};
use crate::render::loss::ssim_value;
use crate::render::{fuse, render_loss, splat_render, volume_render, RayTable, RenderOutput, SourceViews, VolumeStats, BLACK};
use crate::scene::{generate_scene, SyntheticScene};

/// Stream ids carved out of the run seed.
const INIT_STREAM: u64 = 0;
const VIEW_STREAM: u64 = 2;

pub const THETA: &str = "fuse.theta";

/// A scene with everything the renderers and losses reuse across steps.
pub struct SceneCache {
    pub scene: SyntheticScene,
    pub raw: Vec<f64>,
    pub sources: SourceViews,
    pub tables: Vec<RayTable>,
    pub object_masks: Vec<Vec<f64>>,
    pub bev: Vec<f64>,
}

impl SceneCache {
    pub fn new(scene: SyntheticScene) -> Result<Self> {
        let centers = crate::geometry::voxel_centers(&scene.grid);
        let sources = SourceViews::build(&scene.gt_rgb, &scene.cameras, &centers)?;
        let tables = scene.cameras.iter().map(|c| RayTable::build(c, &scene.grid)).collect();
        Ok(Self {
            raw: scene.raw_voxel_major(),
            sources,
            tables,
            object_masks: scene.masks2d.iter().map(|m| m.to_f64()).collect(),
            bev: scene.mask_bev.to_f64(),
            scene,
        })
    }

    pub fn generate(cfg: &RunConfig, seed: u64) -> Result<Self> {
        Self::new(generate_scene(&cfg.scene_for(seed))?)
    }
}

pub fn train_pool(cfg: &RunConfig) -> Result<Vec<SceneCache>> {
    cfg.train_seeds().into_iter().map(|s| SceneCache::generate(cfg, s)).collect()
}

pub fn eval_pool(cfg: &RunConfig) -> Result<Vec<SceneCache>> {
    cfg.eval_seeds().into_iter().map(|s| SceneCache::generate(cfg, s)).collect()
}

pub fn init_params(cfg: &RunConfig) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    let mut store = ParamStore::new();
    init_decoder(&mut store, &cfg.decoder(), &mut rng);
    store.insert(THETA, Tensor::zeros(&[1]));
    let hoa = cfg.hoa_config();
    init_bev_head(&mut store, &hoa, &mut rng);
    init_hoa(&mut store, &hoa, &mut rng);
    store
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub params: ParamStore,
    pub m: ParamStore,
    pub v: ParamStore,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn init(cfg: &RunConfig) -> Self {
        let params = init_params(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(VIEW_STREAM);
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            params,
            rng,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    SceneLevel,
    ObjectCentric,
}

pub fn mask_mode(cfg: &RunConfig, step: u64) -> MaskMode {
    match cfg.goal {
        Goal::Scene => MaskMode::SceneLevel,
        Goal::Object => MaskMode::ObjectCentric,
        Goal::SceneObject if step < cfg.warmup => MaskMode::SceneLevel,
        Goal::SceneObject => MaskMode::ObjectCentric,
    }
}

pub fn loss_mask(cache: &SceneCache, view: usize, mode: MaskMode) -> Vec<f64> {
    match mode {
        MaskMode::SceneLevel => vec![1.0; cache.object_masks[view].len()],
        MaskMode::ObjectCentric => cache.object_masks[view].clone(),
    }
}

/// Graph handles of one forward pass.
pub struct Forward {
    pub total: Var,
    pub render: Var,
    pub mse: Var,
    pub ssim: Var,
    pub l1: Option<Var>,
    pub mask: Var,
    pub gaussian: Option<RenderOutput>,
    pub nerf: Option<RenderOutput>,
    pub fused: Option<RenderOutput>,
    /// `(X, Y)` BEV mask probabilities.
    pub bev_pred: Var,
    pub attention_maps: Option<Var>,
    pub alpha: f64,
    pub query: Option<QuerySource>,
    pub volume_stats: VolumeStats,
}

impl Forward {
    /// The run's final image: fused when both fields are active.
    pub fn output(&self) -> RenderOutput {
        self.fused.or(self.gaussian).or(self.nerf).expect("at least one field renders")
    }
}

/// Builds the full computation for one scene view.
pub fn forward(g: &mut Graph, b: &mut Binder, cfg: &RunConfig, cache: &SceneCache, view: usize, mode: MaskMode) -> Result<Forward> {
    let grid = &cache.scene.grid;
    let cam = &cache.scene.cameras[view];
    let features = voxel_features(g, b, &cache.raw, grid.count())?;
    let theta = b.var(g, THETA)?;
    let alpha = ocrf_diff::sigmoid(g.item(theta));

    let (mut gaussian, mut o_gs) = (None, None);
    if cfg.fields.gaussian() {
        let attrs = decode_gaussians(g, b, features, grid)?;
        gaussian = Some(splat_render(g, &attrs, cam, cfg.footprint)?);
        o_gs = Some(attrs.opacity);
    }
    let (mut nerf, mut o_nerf) = (None, None);
    let mut volume_stats = VolumeStats::default();
    if cfg.fields.nerf() {
        let attrs = decode_nerf(g, b, features)?;
        nerf = Some(volume_render(
            g,
            attrs.opacity,
            attrs.view_logits,
            &cache.tables[view],
            &cache.sources,
            Some(view),
            BLACK,
            &mut volume_stats,
        )?);
        o_nerf = Some(attrs.opacity);
    }
    let fused = match (gaussian, nerf) {
        (Some(a), Some(n)) => Some(fuse(g, &a, &n, theta)?),
        _ => None,
    };
    let outputs: Vec<RenderOutput> = [gaussian, nerf, fused].into_iter().flatten().collect();
    let images: Vec<Var> = outputs.iter().map(|o| o.image).collect();
    let depths: Vec<Var> = outputs.iter().map(|o| o.depth).collect();
    let mask = loss_mask(cache, view, mode);
    let rl = render_loss(
        g,
        &images,
        &depths,
        &cache.scene.gt_rgb[view],
        &cache.scene.gt_depth[view],
        &mask,
        grid.diagonal(),
        &cfg.loss,
        cfg.depth_render,
    )?;

    let mut bev = bev_from_voxels(g, b, features, grid.dims)?;
    let mut attention_maps = None;
    let mut query = None;
    if cfg.hoa {
        let hoa_cfg = cfg.hoa_config();
        let volume = match (cfg.opacity_source, o_gs, o_nerf) {
            (OpacitySource::Fused, Some(a), Some(n)) => {
                let out = opacity_fusion(g, b, a, n, alpha, grid.dims)?;
                query = Some(out.query);
                out.volume
            }
            (OpacitySource::Gaussian | OpacitySource::Fused, Some(a), _) => g.reshape(a, &grid.dims)?,
            (_, _, Some(n)) => g.reshape(n, &grid.dims)?,
            _ => return Err(Error::InvalidConfig("opacity source has no active field".into())),
        };
        let maps = multiscale_hsa(g, b, volume, &hoa_cfg)?;
        bev = apply_attention(g, bev, maps)?;
        attention_maps = Some(maps);
    }
    let bev_pred = bev_mask_head(g, b, bev)?;
    let ml = mask_loss(g, bev_pred, &cache.bev, cfg.lambda_bce, cfg.lambda_dice)?;
    let total = g.add(rl.total, ml.total)?;
    Ok(Forward {
        total,
        render: rl.total,
        mse: rl.mse,
        ssim: rl.ssim,
        l1: rl.l1,
        mask: ml.total,
        gaussian,
        nerf,
        fused,
        bev_pred,
        attention_maps,
        alpha,
        query,
        volume_stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub step: u64,
    pub l_render: f64,
    pub l_mse: f64,
    pub l_ssim: f64,
    pub l_l1: f64,
    pub l_mask: f64,
    pub alpha: f64,
    pub fg_ssim: f64,
    pub full_ssim: f64,
    pub iou: f64,
}

pub const METRICS_HEADER: &str = "step,L_render,L_mse,L_ssim,L_l1,L_mask,alpha,fg_ssim,full_ssim,bev_iou";

/// `%.12g`-style formatting.
pub fn fmt_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        let vals = [
            self.l_render,
            self.l_mse,
            self.l_ssim,
            self.l_l1,
            self.l_mask,
            self.alpha,
            self.fg_ssim,
            self.full_ssim,
            self.iou,
        ];
        let mut s = self.step.to_string();
        for v in vals {
            s.push(',');
            s.push_str(&fmt_sig12(v));
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_render,
            self.l_mse,
            self.l_ssim,
            self.l_l1,
            self.l_mask,
            self.alpha,
            self.fg_ssim,
            self.full_ssim,
            self.iou,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

/// Loss values and image metrics of an evaluated forward pass.
pub fn row_from_forward(g: &Graph, f: &Forward, cache: &SceneCache, view: usize, step: u64) -> Result<MetricsRow> {
    let (w, h) = (cache.scene.width(), cache.scene.height());
    let img = g.value(f.output().image);
    let gt = &cache.scene.gt_rgb[view];
    let m = &cache.object_masks[view];
    let masked = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| v * m[i / 3]).collect() };
    Ok(MetricsRow {
        step,
        l_render: g.item(f.render),
        l_mse: g.item(f.mse),
        l_ssim: g.item(f.ssim),
        l_l1: f.l1.map_or(0.0, |v| g.item(v)),
        l_mask: g.item(f.mask),
        alpha: f.alpha,
        fg_ssim: ssim_value(&masked(img), &masked(gt), h, w)?,
        full_ssim: ssim_value(img, gt, h, w)?,
        iou: mask_iou(g.value(f.bev_pred), &cache.bev),
    })
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub pool: Vec<SceneCache>,
    pub state: TrainState,
    optimizer: Adam,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let state = TrainState::init(&cfg);
        Self::with_state(cfg, state)
    }

    pub fn with_state(cfg: RunConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        let pool = train_pool(&cfg)?;
        Ok(Self {
            optimizer: Adam {
                lr: cfg.lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.adam_eps,
            },
            cfg,
            pool,
            state,
        })
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.cfg.steps
    }

    /// One optimization step; returns a metrics row on logging steps.
    ///
    /// A non-finite loss leaves the state untouched and aborts.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        let step = self.state.step;
        let cache = &self.pool[(step % self.pool.len() as u64) as usize];
        let view = match self.cfg.view {
            ViewSelect::Random => {
                let mut rng = self.state.rng.clone();
                let v = rng.gen_range(0..cache.scene.cameras.len());
                (v, rng)
            }
            ViewSelect::Index(i) => (i, self.state.rng.clone()),
        };
        let (view, next_rng) = view;
        let mode = mask_mode(&self.cfg, step);
        let mut g = Graph::new();
        let mut b = Binder::new(&self.state.params);
        let f = forward(&mut g, &mut b, &self.cfg, cache, view, mode)?;
        if !g.item(f.total).is_finite() {
            return Err(Error::NonFinite {
                step,
                scene_seed: cache.scene.seed,
            });
        }
        let row = if step % self.cfg.metrics_every == 0 {
            let r = row_from_forward(&g, &f, cache, view, step)?;
            if !r.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    scene_seed: cache.scene.seed,
                });
            }
            Some(r)
        } else {
            None
        };
        g.backward(f.total)?;
        let grads = b.gradients(&g);
        drop(b);
        if grads.iter().any(|(_, t)| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                step,
                scene_seed: cache.scene.seed,
            });
        }
        let st = &mut self.state;
        self.optimizer.update(&mut st.params, &mut st.m, &mut st.v, &grads, step + 1)?;
        st.rng = next_rng;
        st.step += 1;
        Ok(row)
    }

    /// Runs until the configured step budget, reporting each metrics row.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while !self.done() {
            if let Some(r) = self.step()? {
                on_row(&r);
                rows.push(r);
            }
        }
        Ok(rows)
    }
}

/// Trains from scratch to `cfg.steps`.
pub fn train(cfg: &RunConfig) -> Result<(TrainState, Vec<MetricsRow>)> {
    let mut t = Trainer::new(cfg.clone())?;
    let rows = t.run(|_| {})?;
    Ok((t.state, rows))
}

/// Averages object-centric metrics over every `(scene, view)` pair; the row's
/// step is the state's step.
pub fn evaluate(cfg: &RunConfig, params: &ParamStore, step: u64, scenes: &[SceneCache], views: &[usize]) -> Result<MetricsRow> {
    let mut acc = MetricsRow {
        step,
        ..MetricsRow::default()
    };
    let mut count = 0.0;
    for cache in scenes {
        for &view in views {
            let mut g = Graph::new();
            let mut b = Binder::frozen(params);
            let f = forward(&mut g, &mut b, cfg, cache, view, MaskMode::ObjectCentric)?;
            let r = row_from_forward(&g, &f, cache, view, step)?;
            acc.l_render += r.l_render;
            acc.l_mse += r.l_mse;
            acc.l_ssim += r.l_ssim;
            acc.l_l1 += r.l_l1;
            acc.l_mask += r.l_mask;
            acc.alpha = r.alpha;
            acc.fg_ssim += r.fg_ssim;
            acc.full_ssim += r.full_ssim;
            acc.iou += r.iou;
            count += 1.0;
        }
    }
    if count > 0.0 {
        for v in [
            &mut acc.l_render,
            &mut acc.l_mse,
            &mut acc.l_ssim,
            &mut acc.l_l1,
            &mut acc.l_mask,
            &mut acc.fg_ssim,
            &mut acc.full_ssim,
            &mut acc.iou,
        ] {
            *v /= count;
        }
    }
    Ok(acc)
}

/// Plain buffers of one rendered view.
pub struct RenderedView {
    pub image: Vec<f64>,
    pub depth: Vec<f64>,
    pub bev_pred: Vec<f64>,
    pub attention_maps: Option<Vec<f64>>,
}

pub fn render_view(cfg: &RunConfig, params: &ParamStore, cache: &SceneCache, view: usize) -> Result<RenderedView> {
    if view >= cache.scene.cameras.len() {
        return Err(Error::InvalidConfig(format!("view {view} out of range")));
    }
    let mut g = Graph::new();
    let mut b = Binder::frozen(params);
    let f = forward(&mut g, &mut b, cfg, cache, view, MaskMode::ObjectCentric)?;
    let out = f.output();
    Ok(RenderedView {
        image: g.value(out.image).to_vec(),
        depth: g.value(out.depth).to_vec(),
        bev_pred: g.value(f.bev_pred).to_vec(),
        attention_maps: f.attention_maps.map(|m| g.value(m).to_vec()),
    })
}
