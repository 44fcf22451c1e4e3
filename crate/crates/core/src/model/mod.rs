//! The image encoder and the radiomics encoder that share one embedding space.

mod checkpoint;
mod fpe;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ape::{ApePoint, AtlasBounds};
use crate::nn::{Graph, Init, ParamId, ParamStore, Var};
use crate::phantom::MAX_PROMPTS;
use crate::radiomics::{RadiomicsVector, NUM_FEATURES};
use crate::volume::Volume;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use fpe::Fpe;

/// Standardized radiomics values are clipped to this magnitude before tokenization.
pub const VALUE_CLIP: f64 = 6.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prompt {0:?} lies outside the crop")]
    PromptOutOfCrop([usize; 3]),
    #[error("{0} prompts given; 1 to 10 are allowed")]
    TooManyPrompts(usize),
    #[error("at least one prompt is required")]
    NoPrompts,
    #[error("query has neither radiomics features nor an APE point")]
    EmptyQuery,
    #[error("setting {0} has no {1} input")]
    Unsupported(Setting, &'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The five ablation settings: which position encodings feed the image path
/// and whether a radiomics encoder is trained alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    ImageFpe,
    ImageApe,
    ImageRadiomicsFpe,
    ImageRadiomicsApe,
    ImageRadiomicsFpeApe,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::ImageFpe,
        Setting::ImageApe,
        Setting::ImageRadiomicsFpe,
        Setting::ImageRadiomicsApe,
        Setting::ImageRadiomicsFpeApe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::ImageFpe => "image_fpe",
            Setting::ImageApe => "image_ape",
            Setting::ImageRadiomicsFpe => "image_radiomics_fpe",
            Setting::ImageRadiomicsApe => "image_radiomics_ape",
            Setting::ImageRadiomicsFpeApe => "image_radiomics_fpe_ape",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Setting::ImageFpe => "<Image,FPE>",
            Setting::ImageApe => "<Image,APE>",
            Setting::ImageRadiomicsFpe => "<Image,Radiomics,FPE>",
            Setting::ImageRadiomicsApe => "<Image,Radiomics,APE>",
            Setting::ImageRadiomicsFpeApe => "<Image,Radiomics,FPE+APE>",
        }
    }

    pub fn from_name(s: &str) -> Option<Setting> {
        Setting::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn uses_fpe(self) -> bool {
        matches!(self, Setting::ImageFpe | Setting::ImageRadiomicsFpe | Setting::ImageRadiomicsFpeApe)
    }

    pub fn uses_ape(self) -> bool {
        matches!(self, Setting::ImageApe | Setting::ImageRadiomicsApe | Setting::ImageRadiomicsFpeApe)
    }

    pub fn uses_radiomics(self) -> bool {
        !matches!(self, Setting::ImageFpe | Setting::ImageApe)
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    /// Edge length of the cubic crop; divisible by 8.
    pub crop: usize,
    pub channels: [usize; 3],
    pub d_model: usize,
    /// Frequency count of the Fourier encoding (encoding dim is twice this).
    pub fpe_bands: usize,
    pub classes: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        ImageEncoderConfig { crop: 32, channels: [8, 16, 32], d_model: 64, fpe_bands: 8, classes: 2 }
    }
}

impl ImageEncoderConfig {
    pub fn grid(&self) -> usize {
        self.crop / 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiomicsEncoderConfig {
    pub d_token: usize,
    pub hidden: usize,
    pub d: usize,
}

impl Default for RadiomicsEncoderConfig {
    fn default() -> Self {
        RadiomicsEncoderConfig { d_token: 32, hidden: 128, d: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub image: ImageEncoderConfig,
    pub radiomics: RadiomicsEncoderConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let i = &self.image;
        if i.crop == 0 || i.crop % 8 != 0 {
            return Err(ModelError::InvalidConfig(format!("crop {} is not a positive multiple of 8", i.crop)));
        }
        if i.d_model != self.radiomics.d {
            return Err(ModelError::InvalidConfig("image and radiomics embedding dims differ".into()));
        }
        if i.classes < 2 || i.channels.contains(&0) || i.d_model == 0 || i.fpe_bands == 0 {
            return Err(ModelError::InvalidConfig("zero-sized layer".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.image.d_model
    }
}

#[derive(Debug, Clone)]
struct ImageParams {
    conv: [(ParamId, ParamId); 3],
    feat: (ParamId, ParamId),
    fpe: Option<ParamId>,
    ape: Option<ParamId>,
    prompt: (ParamId, ParamId),
    tokens: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    class: (ParamId, ParamId),
    contrastive: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct RadiomicsParams {
    names: ParamId,
    values: ParamId,
    ape: Option<(ParamId, ParamId)>,
    layers: [(ParamId, ParamId); 3],
}

/// Everything the image encoder sees for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    /// Crop intensities, x fastest.
    pub crop: Vec<f64>,
    /// Prompt voxels in crop coordinates.
    pub prompts: Vec<[usize; 3]>,
    /// APE value at each prompt.
    pub prompt_ape: Vec<[f64; 3]>,
    /// Mean APE per cell of the encoder's feature grid, 3 values per cell.
    pub ape_grid: Vec<f64>,
}

/// Offset of a `crop`³ window centered on `center` and clamped to the volume.
pub fn centered_offset(dims: [usize; 3], center: [usize; 3], crop: usize) -> [usize; 3] {
    std::array::from_fn(|a| {
        let lo = center[a] as i64 - crop as i64 / 2;
        lo.clamp(0, dims[a].saturating_sub(crop) as i64) as usize
    })
}

impl ImageInput {
    /// Cuts the crop at `offset` and expresses `prompts` (volume voxels) in it.
    pub fn new(
        v: &Volume,
        atlas: &AtlasBounds,
        prompts: &[[usize; 3]],
        offset: [usize; 3],
        cfg: &ImageEncoderConfig,
    ) -> Result<Self, ModelError> {
        let n = cfg.crop;
        if prompts.is_empty() {
            return Err(ModelError::NoPrompts);
        }
        if prompts.len() > MAX_PROMPTS {
            return Err(ModelError::TooManyPrompts(prompts.len()));
        }
        let dims = v.dims();
        if (0..3).any(|a| offset[a] + n > dims[a]) {
            return Err(ModelError::InvalidConfig(format!("crop {n} at {offset:?} exceeds volume {dims:?}")));
        }
        let mut local = Vec::with_capacity(prompts.len());
        for p in prompts {
            if (0..3).any(|a| p[a] < offset[a] || p[a] >= offset[a] + n) {
                return Err(ModelError::PromptOutOfCrop(*p));
            }
            local.push(std::array::from_fn(|a| p[a] - offset[a]));
        }
        let mut crop = Vec::with_capacity(n * n * n);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    crop.push(v.get(offset[0] + x, offset[1] + y, offset[2] + z) as f64);
                }
            }
        }
        let g = v.geometry();
        let world = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|a| g.origin[a] + (p[a] + 0.5) * g.spacing[a]) };
        let prompt_ape = prompts.iter().map(|p| atlas.normalize(world(p.map(|c| c as f64)))).collect();
        // APE is affine in the voxel index, so the mean over a cell is the APE of its center.
        let cells = cfg.grid();
        let block = (n / cells) as f64;
        let mut ape_grid = Vec::with_capacity(cells * cells * cells * 3);
        for z in 0..cells {
            for y in 0..cells {
                for x in 0..cells {
                    let c = [x, y, z].map(|i| i as f64 * block + (block - 1.0) / 2.0);
                    let p = std::array::from_fn(|a| offset[a] as f64 + c[a]);
                    ape_grid.extend(atlas.normalize(world(p)));
                }
            }
        }
        Ok(ImageInput { crop, prompts: local, prompt_ape, ape_grid })
    }

    /// A crop centered on the first prompt.
    pub fn centered(
        v: &Volume,
        atlas: &AtlasBounds,
        prompts: &[[usize; 3]],
        cfg: &ImageEncoderConfig,
    ) -> Result<Self, ModelError> {
        let first = *prompts.first().ok_or(ModelError::NoPrompts)?;
        if !v.geometry().contains(first) {
            return Err(ModelError::PromptOutOfCrop(first));
        }
        ImageInput::new(v, atlas, prompts, centered_offset(v.dims(), first, cfg.crop), cfg)
    }
}

/// Tape handles of one image forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ImageVars {
    /// `[1, crop, crop, crop]`.
    pub mask_logits: Var,
    /// `[1, classes]`.
    pub class_logits: Var,
    /// `[1, d]`, unit norm.
    pub embedding: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutputs {
    pub mask_logits: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// A radiomics-side query: any subset of standardized features, an APE point, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiomicsInput {
    pub features: RadiomicsVector,
    pub ape: Option<ApePoint>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub setting: Setting,
    pub config: ModelConfig,
    pub store: ParamStore,
    fpe: Fpe,
    fpe_grid: Vec<f64>,
    image: ImageParams,
    radiomics: Option<RadiomicsParams>,
}

impl Model {
    pub fn new(setting: Setting, config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let ic = config.image;
        let rc = config.radiomics;
        let d = ic.d_model;
        let mut s = ParamStore::new(config.seed);
        let fpe = Fpe::new(ic.fpe_bands, crate::phantom::derive_seed(config.seed, 0xF9E));
        let fd = fpe.dim();

        let mut cin = 1;
        let conv = std::array::from_fn(|k| {
            let co = ic.channels[k];
            let w = s.add(&format!("image.conv{k}.w"), &[co, cin, 3, 3, 3], Init::FanIn(cin * 27));
            let b = s.add(&format!("image.conv{k}.b"), &[co], Init::Zeros);
            cin = co;
            (w, b)
        });
        let c3 = ic.channels[2];
        let feat = (s.add("image.feat.w", &[c3, d], Init::FanIn(c3)), s.add("image.feat.b", &[1, d], Init::Zeros));
        let fpe_w = setting.uses_fpe().then(|| s.add("image.fpe.w", &[fd, d], Init::FanIn(fd)));
        let ape_w = setting.uses_ape().then(|| s.add("image.ape.w", &[3, d], Init::FanIn(3)));
        let pin = prompt_dim(setting, fd);
        let prompt = (s.add("image.prompt.w", &[pin, d], Init::FanIn(pin)), s.add("image.prompt.b", &[1, d], Init::Zeros));
        let tokens = s.add("image.tokens", &[3, d], Init::Normal(0.5));
        let wq = s.add("image.attn.q", &[d, d], Init::FanIn(d));
        let wk = s.add("image.attn.k", &[d, d], Init::FanIn(d));
        let wv = s.add("image.attn.v", &[d, d], Init::FanIn(d));
        let class = (s.add("image.class.w", &[d, ic.classes], Init::FanIn(d)), s.add("image.class.b", &[1, ic.classes], Init::Zeros));
        let contrastive = (s.add("image.con.w", &[d, d], Init::FanIn(d)), s.add("image.con.b", &[1, d], Init::Zeros));
        let image = ImageParams { conv, feat, fpe: fpe_w, ape: ape_w, prompt, tokens, wq, wk, wv, class, contrastive };

        let radiomics = setting.uses_radiomics().then(|| {
            let t = rc.d_token;
            let names = s.add("radiomics.names", &[NUM_FEATURES, t], Init::Normal(1.0));
            let values = s.add("radiomics.values", &[NUM_FEATURES, t], Init::Normal(1.0));
            let ape = setting
                .uses_ape()
                .then(|| (s.add("radiomics.ape.w", &[3, t], Init::FanIn(3)), s.add("radiomics.ape.b", &[1, t], Init::Normal(1.0))));
            let dims = [(t, rc.hidden), (rc.hidden, rc.hidden), (rc.hidden, rc.d)];
            let layers = std::array::from_fn(|k| {
                let (i, o) = dims[k];
                (s.add(&format!("radiomics.mlp{k}.w"), &[i, o], Init::FanIn(i)), s.add(&format!("radiomics.mlp{k}.b"), &[1, o], Init::Zeros))
            });
            RadiomicsParams { names, values, ape, layers }
        });

        let fpe_grid = fpe.grid(ic.grid());
        Ok(Model { setting, config, store: s, fpe, fpe_grid, image, radiomics })
    }

    pub fn fpe(&self) -> &Fpe {
        &self.fpe
    }

    pub fn has_radiomics_encoder(&self) -> bool {
        self.radiomics.is_some()
    }

    fn check_prompts(&self, input: &ImageInput) -> Result<(), ModelError> {
        let n = self.config.image.crop;
        if input.prompts.is_empty() {
            return Err(ModelError::NoPrompts);
        }
        if input.prompts.len() > MAX_PROMPTS {
            return Err(ModelError::TooManyPrompts(input.prompts.len()));
        }
        if let Some(p) = input.prompts.iter().find(|p| p.iter().any(|&c| c >= n)) {
            return Err(ModelError::PromptOutOfCrop(*p));
        }
        if input.crop.len() != n * n * n {
            return Err(ModelError::InvalidConfig(format!("crop has {} voxels, expected {}", input.crop.len(), n * n * n)));
        }
        Ok(())
    }

    /// Records the image forward pass on `g`.
    pub fn image_forward(&self, g: &mut Graph, input: &ImageInput) -> Result<ImageVars, ModelError> {
        self.check_prompts(input)?;
        let ic = self.config.image;
        let (n, d, cells) = (ic.crop, ic.d_model, ic.grid());
        let ncell = cells * cells * cells;
        let s = &self.store;
        let p = &self.image;

        let mut h = g.constant(&[1, n, n, n], input.crop.clone());
        for &(w, b) in &p.conv {
            let (w, b) = (g.param(s, w), g.param(s, b));
            let c = g.conv3d(h, w, b);
            h = g.silu(c);
        }
        let c3 = ic.channels[2];
        let h = g.reshape(h, &[c3, ncell]);
        let h = g.transpose(h);
        let (fw, fb) = (g.param(s, p.feat.0), g.param(s, p.feat.1));
        let mut feats = g.linear(h, fw, fb);
        if let Some(id) = p.fpe {
            let grid = g.constant(&[ncell, self.fpe.dim()], self.fpe_grid.clone());
            let w = g.param(s, id);
            let pos = g.matmul(grid, w);
            feats = g.add(feats, pos);
        }
        if let Some(id) = p.ape {
            let grid = g.constant(&[ncell, 3], input.ape_grid.clone());
            let w = g.param(s, id);
            let pos = g.matmul(grid, w);
            feats = g.add(feats, pos);
        }

        let k = input.prompts.len();
        let mut prompt_rows = Vec::new();
        for (q, ape) in input.prompts.iter().zip(&input.prompt_ape) {
            if self.setting.uses_fpe() {
                prompt_rows.extend(self.fpe.encode(q.map(|c| (c as f64 + 0.5) / n as f64)));
            }
            if self.setting.uses_ape() {
                prompt_rows.extend(ape);
            }
        }
        let pin = prompt_dim(self.setting, self.fpe.dim());
        let prompts = g.constant(&[k, pin], prompt_rows);
        let (pw, pb) = (g.param(s, p.prompt.0), g.param(s, p.prompt.1));
        let prompt_tokens = g.linear(prompts, pw, pb);
        let prompt = g.mean_rows(prompt_tokens);

        let tokens = g.param(s, p.tokens);
        let tokens = g.add_row(tokens, prompt);
        let (wq, wk, wv) = (g.param(s, p.wq), g.param(s, p.wk), g.param(s, p.wv));
        let q = g.matmul(tokens, wq);
        let kk = g.matmul(feats, wk);
        let v = g.matmul(feats, wv);
        let scores = g.matmul_nt(q, kk);
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = g.softmax_rows(scores);
        let mixed = g.matmul(attn, v);
        let out = g.add(tokens, mixed);

        let mask_token = g.slice_rows(out, 0, 1);
        let coarse = g.matmul_nt(feats, mask_token);
        let coarse = g.reshape(coarse, &[1, cells, cells, cells]);
        let mask_logits = g.upsample_trilinear(coarse, n / cells);

        let class_token = g.slice_rows(out, 1, 1);
        let (cw, cb) = (g.param(s, p.class.0), g.param(s, p.class.1));
        let class_logits = g.linear(class_token, cw, cb);

        let con_token = g.slice_rows(out, 2, 1);
        let (zw, zb) = (g.param(s, p.contrastive.0), g.param(s, p.contrastive.1));
        let z = g.linear(con_token, zw, zb);
        let embedding = g.l2_normalize_rows(z);
        Ok(ImageVars { mask_logits, class_logits, embedding })
    }

    /// Records the radiomics forward pass on `g`; returns the `[1, d]` embedding.
    pub fn radiomics_forward(&self, g: &mut Graph, input: &RadiomicsInput) -> Result<Var, ModelError> {
        let rp = self.radiomics.as_ref().ok_or(ModelError::Unsupported(self.setting, "radiomics"))?;
        if input.ape.is_some() && rp.ape.is_none() {
            return Err(ModelError::Unsupported(self.setting, "APE"));
        }
        let s = &self.store;
        let (idx, vals): (Vec<usize>, Vec<f64>) =
            input.features.present_entries().map(|(i, v)| (i, v.clamp(-VALUE_CLIP, VALUE_CLIP))).unzip();
        let mut parts = Vec::new();
        if !idx.is_empty() {
            let names = g.param(s, rp.names);
            let values = g.param(s, rp.values);
            let e_name = g.gather_rows(names, &idx);
            let e_value = g.gather_rows(values, &idx);
            let e_value = g.scale_rows(e_value, &vals);
            parts.push(g.add(e_name, e_value));
        }
        if let (Some(ape), Some((w, b))) = (input.ape, rp.ape) {
            let x = g.constant(&[1, 3], ape.values.to_vec());
            let (w, b) = (g.param(s, w), g.param(s, b));
            parts.push(g.linear(x, w, b));
        }
        if parts.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        let tokens = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let mut h = g.mean_rows(tokens);
        for (k, &(w, b)) in rp.layers.iter().enumerate() {
            let (w, b) = (g.param(s, w), g.param(s, b));
            h = g.linear(h, w, b);
            if k < 2 {
                h = g.silu(h);
            }
        }
        Ok(g.l2_normalize_rows(h))
    }

    pub fn encode_image(&self, input: &ImageInput) -> Result<ImageOutputs, ModelError> {
        let mut g = Graph::new();
        let v = self.image_forward(&mut g, input)?;
        Ok(ImageOutputs {
            mask_logits: g.value(v.mask_logits).to_vec(),
            class_logits: g.value(v.class_logits).to_vec(),
            embedding: g.value(v.embedding).to_vec(),
        })
    }

    pub fn encode_radiomics(&self, input: &RadiomicsInput) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let z = self.radiomics_forward(&mut g, input)?;
        Ok(g.value(z).to_vec())
    }
}

fn prompt_dim(setting: Setting, fpe_dim: usize) -> usize {
    (if setting.uses_fpe() { fpe_dim } else { 0 }) + if setting.uses_ape() { 3 } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{center_prompt, dataset_spec, generate_phantom};
    use crate::radiomics::{extract_all, feature_index};

    fn phantom_input(cfg: &ImageEncoderConfig, extra: &[[usize; 3]]) -> ImageInput {
        let p = generate_phantom(&dataset_spec(4, 1)).unwrap();
        let atlas = AtlasBounds::of(p.volume.geometry());
        let c = center_prompt(&p.mask).unwrap().voxel;
        let mut prompts = vec![c];
        prompts.extend(extra.iter().map(|e| std::array::from_fn(|a| c[a] + e[a])));
        ImageInput::centered(&p.volume, &atlas, &prompts, cfg).unwrap()
    }

    fn norm(z: &[f64]) -> f64 {
        z.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn image_output_shapes_and_unit_norm() {
        for setting in Setting::ALL {
            let m = Model::new(setting, ModelConfig::default()).unwrap();
            let out = m.encode_image(&phantom_input(&m.config.image, &[])).unwrap();
            assert_eq!(out.mask_logits.len(), 32 * 32 * 32);
            assert_eq!(out.class_logits.len(), 2);
            assert_eq!(out.embedding.len(), 64);
            assert!((norm(&out.embedding) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prompt_order_does_not_matter() {
        let m = Model::new(Setting::ImageRadiomicsFpeApe, ModelConfig::default()).unwrap();
        let a = phantom_input(&m.config.image, &[[1, 0, 0], [0, 1, 0]]);
        let mut b = a.clone();
        b.prompts.reverse();
        b.prompt_ape.reverse();
        let (oa, ob) = (m.encode_image(&a).unwrap(), m.encode_image(&b).unwrap());
        for (x, y) in oa.embedding.iter().zip(&ob.embedding) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(m.encode_image(&a).unwrap(), oa);
    }

    #[test]
    fn prompt_limits() {
        let m = Model::new(Setting::ImageFpe, ModelConfig::default()).unwrap();
        let mut input = phantom_input(&m.config.image, &[]);
        input.prompts = vec![[0; 3]; 11];
        input.prompt_ape = vec![[0.0; 3]; 11];
        assert!(matches!(m.encode_image(&input), Err(ModelError::TooManyPrompts(11))));
        input.prompts = vec![[40, 0, 0]];
        input.prompt_ape = vec![[0.0; 3]];
        assert!(matches!(m.encode_image(&input), Err(ModelError::PromptOutOfCrop(_))));
    }

    #[test]
    fn radiomics_embedding_is_unit_and_order_free() {
        let m = Model::new(Setting::ImageRadiomicsApe, ModelConfig::default()).unwrap();
        let p = generate_phantom(&dataset_spec(4, 2)).unwrap();
        let r = extract_all(&p.volume, &p.mask).unwrap();
        let r = RadiomicsVector::full(r.values.iter().map(|v| v.tanh()).collect()).unwrap();
        let z = m.encode_radiomics(&RadiomicsInput { features: r.clone(), ape: None }).unwrap();
        assert_eq!(z.len(), 64);
        assert!((norm(&z) - 1.0).abs() < 1e-6);

        // Tokens are keyed by feature identity, so supplying the same subset
        // through a differently ordered name list gives the same embedding.
        let names = ["Sphericity", "Mean", "Contrast"];
        let fwd = RadiomicsVector::from_named(names.iter().map(|n| (*n, r.values[feature_index(n).unwrap()]))).unwrap();
        let rev = RadiomicsVector::from_named(names.iter().rev().map(|n| (*n, r.values[feature_index(n).unwrap()]))).unwrap();
        let a = m.encode_radiomics(&RadiomicsInput { features: fwd, ape: None }).unwrap();
        let b = m.encode_radiomics(&RadiomicsInput { features: rev, ape: None }).unwrap();
        assert_eq!(a, b);

        let ape = Some(ApePoint::new([0.2, -0.3, 0.9]).unwrap());
        let only = m.encode_radiomics(&RadiomicsInput { features: RadiomicsVector::empty(), ape }).unwrap();
        assert!((norm(&only) - 1.0).abs() < 1e-6);
        let empty = m.encode_radiomics(&RadiomicsInput { features: RadiomicsVector::empty(), ape: None });
        assert!(matches!(empty, Err(ModelError::EmptyQuery)));
    }

    #[test]
    fn ape_requires_ape_setting() {
        let m = Model::new(Setting::ImageRadiomicsFpe, ModelConfig::default()).unwrap();
        let ape = Some(ApePoint::new([0.0; 3]).unwrap());
        let r = m.encode_radiomics(&RadiomicsInput { features: RadiomicsVector::empty(), ape });
        assert!(matches!(r, Err(ModelError::Unsupported(_, "APE"))));
        let m = Model::new(Setting::ImageFpe, ModelConfig::default()).unwrap();
        assert!(!m.has_radiomics_encoder());
    }

    #[test]
    fn centered_offset_clamps() {
        assert_eq!(centered_offset([64; 3], [32, 2, 63], 32), [16, 0, 32]);
    }
}
