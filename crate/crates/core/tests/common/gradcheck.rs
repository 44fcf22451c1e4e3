//! Central finite differences against tape gradients on a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::model::{
    centered_offset, ImageEncoderConfig, ImageInput, Model, ModelConfig, RadiomicsEncoderConfig, RadiomicsInput, Setting,
};
use tumor_retrieval::nn::{Graph, ParamGrads, ParamId, Var};
use tumor_retrieval::phantom::{center_prompt, sample_dataset, sample_point_prompts};
use tumor_retrieval::train::{classification_loss, dice_ce_loss, multi_positive_infonce};

pub const STEP: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Mask,
    Class,
    Contrastive,
}

pub struct Fixture {
    pub model: Model,
    inputs: Vec<ImageInput>,
    targets: Vec<Vec<u8>>,
    labels: Vec<usize>,
    image_ids: Vec<usize>,
    radiomics: Vec<RadiomicsInput>,
    radiomics_ids: Vec<usize>,
}

pub fn mini_config(seed: u64) -> ModelConfig {
    ModelConfig {
        image: ImageEncoderConfig { crop: 16, channels: [3, 4, 5], d_model: 8, fpe_bands: 2, classes: 2 },
        radiomics: RadiomicsEncoderConfig { d_token: 6, hidden: 10, d: 8 },
        seed,
    }
}

/// Two tumors, two crops each, plus full, subset, and APE-only radiomics views.
pub fn fixture(seed: u64) -> Fixture {
    let model = Model::new(Setting::ImageRadiomicsFpeApe, mini_config(seed)).unwrap();
    let data = Dataset::from_phantoms(sample_dataset(2, seed).unwrap(), seed, None).unwrap();
    let cfg = model.config.image;
    let mut fx = Fixture {
        model,
        inputs: Vec::new(),
        targets: Vec::new(),
        labels: Vec::new(),
        image_ids: Vec::new(),
        radiomics: Vec::new(),
        radiomics_ids: Vec::new(),
    };
    for (t, item) in data.items.iter().enumerate() {
        let c = center_prompt(&item.mask).unwrap().voxel;
        let extra: Vec<[usize; 3]> =
            sample_point_prompts(&item.mask, 3, seed + t as u64).unwrap().into_iter().map(|p| p.voxel).collect();
        for prompts in [vec![c], [vec![c], extra].concat()] {
            let offset = centered_offset(item.volume.dims(), c, cfg.crop);
            let input = ImageInput::new(&item.volume, &item.atlas, &prompts, offset, &cfg).unwrap();
            let target = item.mask.crop(offset, [cfg.crop; 3]).unwrap().data().to_vec();
            fx.inputs.push(input);
            fx.targets.push(target);
            fx.labels.push(item.class.unwrap().index());
            fx.image_ids.push(t);
        }
        let ape = tumor_retrieval::ape::ApePoint::new(fx.inputs.last().unwrap().prompt_ape[0]).unwrap();
        let subset = item.radiomics.subset(&[0, 5, 20, 33, 60]);
        for (features, ape) in [
            (item.radiomics.clone(), Some(ape)),
            (subset, None),
            (tumor_retrieval::radiomics::RadiomicsVector::empty(), Some(ape)),
        ] {
            fx.radiomics.push(RadiomicsInput { features, ape });
            fx.radiomics_ids.push(t);
        }
    }
    fx
}

/// The head's loss and, when requested, its parameter gradients.
pub fn loss(fx: &Fixture, head: Head, grads: bool) -> (f64, Option<ParamGrads>) {
    let m = &fx.model;
    let mut graphs: Vec<(Graph, Vec<(Var, Vec<f64>)>)> = Vec::new();
    let mut total = 0.0;
    let mut image_vars = Vec::new();
    for input in &fx.inputs {
        let mut g = Graph::new();
        let v = m.image_forward(&mut g, input).unwrap();
        image_vars.push(v);
        graphs.push((g, Vec::new()));
    }
    match head {
        Head::Mask | Head::Class => {
            for (i, (g, seeds)) in graphs.iter_mut().enumerate() {
                let v = image_vars[i];
                let (l, d, var) = if head == Head::Mask {
                    let (l, d) = dice_ce_loss(g.value(v.mask_logits), &fx.targets[i]).unwrap();
                    (l, d, v.mask_logits)
                } else {
                    let (l, d) = classification_loss(g.value(v.class_logits), Some(fx.labels[i])).unwrap();
                    (l, d, v.class_logits)
                };
                total += l;
                seeds.push((var, d));
            }
        }
        Head::Contrastive => {
            let mut z: Vec<Vec<f64>> = graphs.iter().zip(&image_vars).map(|((g, _), v)| g.value(v.embedding).to_vec()).collect();
            let mut vars: Vec<Var> = image_vars.iter().map(|v| v.embedding).collect();
            for r in &fx.radiomics {
                let mut g = Graph::new();
                let e = m.radiomics_forward(&mut g, r).unwrap();
                z.push(g.value(e).to_vec());
                vars.push(e);
                graphs.push((g, Vec::new()));
            }
            let ids: Vec<usize> = fx.image_ids.iter().chain(&fx.radiomics_ids).copied().collect();
            let (l, dz) = multi_positive_infonce(&z, &ids, 0.07).unwrap();
            total = l;
            for (((_, seeds), var), d) in graphs.iter_mut().zip(vars).zip(dz) {
                seeds.push((var, d));
            }
        }
    }
    if !grads {
        return (total, None);
    }
    let mut acc = m.store.zero_grads();
    for (g, seeds) in &graphs {
        let s: Vec<(Var, &[f64])> = seeds.iter().map(|(v, d)| (*v, d.as_slice())).collect();
        g.backward(&s, &m.store, &mut acc);
    }
    (total, Some(acc))
}

#[derive(Debug, Clone)]
pub struct Report {
    pub head: Head,
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Compares `coords` randomly chosen coordinates of parameters that receive
/// a nonzero gradient from the head.
pub fn check(fx: &mut Fixture, head: Head, coords: usize, seed: u64) -> Report {
    let (_, g) = loss(fx, head, true);
    let g = g.unwrap();
    let ids: Vec<ParamId> = fx.model.store.ids().filter(|&id| g.get(id).iter().any(|&x| x != 0.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report { head, checked: 0, max_rel: 0.0, worst: String::new() };
    for _ in 0..coords {
        let id = ids[rng.random_range(0..ids.len())];
        let i = rng.random_range(0..g.get(id).len());
        let x0 = fx.model.store.values(id)[i];
        fx.model.store.values_mut(id)[i] = x0 + STEP;
        let (lp, _) = loss(fx, head, false);
        fx.model.store.values_mut(id)[i] = x0 - STEP;
        let (lm, _) = loss(fx, head, false);
        fx.model.store.values_mut(id)[i] = x0;
        let numeric = (lp - lm) / (2.0 * STEP);
        let analytic = g.get(id)[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FLOOR);
        report.checked += 1;
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst = format!("{}[{i}]: analytic {analytic:.6e} numeric {numeric:.6e}", fx.model.store.name(id));
        }
    }
    report
}
