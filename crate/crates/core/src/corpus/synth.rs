//! Seeded synthetic stand-in for a captioning corpus.
//!
//! Each example is a small scene: an object, plus up to two of attribute,
//! verb and scene drawn from the object's category. Visual features are the
//! sum of the scene's concept columns of a random F×C projection plus Gaussian
//! noise, so every concept is linearly decodable from features. Paired data
//! never mentions a held-out word; unpaired images, unpaired text and the
//! test split cover every concept.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::concepts::ConceptSet;
use crate::corpus::data::{
    save_concepts, save_paired, save_text, save_unpaired_images, PairedExample, UnpairedImageExample, Visual,
};
use crate::error::{DccError, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryTemplate {
    pub name: String,
    pub objects: Vec<String>,
    pub verbs: Vec<String>,
    pub scenes: Vec<String>,
    /// Words placed before the scene, e.g. "in the".
    pub scene_prep: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub categories: Vec<CategoryTemplate>,
    pub attributes: Vec<String>,
    /// Sentence frames; `{}` is replaced by the noun phrase.
    pub openers: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_concepts: usize,
    pub feature_dim: usize,
    pub num_paired: usize,
    pub num_unpaired_images: usize,
    pub num_unpaired_text: usize,
    pub num_test: usize,
    pub heldout: Vec<String>,
    pub noise_std: f64,
    pub templates: TemplateSet,
    /// When set, examples carry per-frame features (video) instead of one vector.
    pub frames: Option<FrameSpec>,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            categories: vec![
                CategoryTemplate {
                    name: "animal".into(),
                    objects: words(&["giraffe", "zebra", "elephant"]),
                    verbs: words(&["standing", "grazing"]),
                    scenes: words(&["field"]),
                    scene_prep: "in the".into(),
                },
                CategoryTemplate {
                    name: "food".into(),
                    objects: words(&["sandwich", "pizza", "cake"]),
                    verbs: vec![],
                    scenes: words(&["table"]),
                    scene_prep: "on the".into(),
                },
            ],
            attributes: words(&["large", "small"]),
            openers: words(&["a {}", "there is a {}", "a photo of a {}"]),
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 42,
            num_concepts: 12,
            feature_dim: 64,
            num_paired: 1000,
            num_unpaired_images: 500,
            num_unpaired_text: 3000,
            num_test: 300,
            heldout: words(&["zebra", "pizza"]),
            noise_std: 0.1,
            templates: TemplateSet::default(),
            frames: None,
        }
    }
}

impl TemplateSet {
    /// Concept words in row order: objects, attributes, verbs, scenes.
    pub fn concept_words(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let groups = [
            self.categories.iter().flat_map(|c| c.objects.iter()).collect::<Vec<_>>(),
            self.attributes.iter().collect(),
            self.categories.iter().flat_map(|c| c.verbs.iter()).collect(),
            self.categories.iter().flat_map(|c| c.scenes.iter()).collect(),
        ];
        for w in groups.into_iter().flatten() {
            if !out.contains(w) {
                out.push(w.clone());
            }
        }
        out
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let concepts = self.templates.concept_words();
        if concepts.len() != self.num_concepts {
            return Err(DccError::config(format!(
                "templates define {} concepts but num_concepts is {}",
                concepts.len(),
                self.num_concepts
            )));
        }
        for w in &self.heldout {
            if !concepts.contains(w) {
                return Err(DccError::config(format!("held-out word `{w}` is not a concept")));
            }
        }
        let counts = [
            ("feature_dim", self.feature_dim),
            ("num_paired", self.num_paired),
            ("num_unpaired_images", self.num_unpaired_images),
            ("num_unpaired_text", self.num_unpaired_text),
            ("num_test", self.num_test),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(DccError::config(format!("{name} must be > 0")));
        }
        if !(self.noise_std >= 0.0) {
            return Err(DccError::config("noise_std must be >= 0"));
        }
        if self.templates.openers.is_empty() || self.templates.openers.iter().any(|o| !o.contains("{}")) {
            return Err(DccError::config("every opener needs a `{}` slot"));
        }
        if self.templates.categories.iter().any(|c| c.objects.is_empty()) {
            return Err(DccError::config("every category needs at least one object"));
        }
        let all_objects_held = self
            .templates
            .categories
            .iter()
            .flat_map(|c| &c.objects)
            .all(|o| self.heldout.contains(o));
        if all_objects_held {
            return Err(DccError::config("every object is held out; paired data would be empty"));
        }
        if let Some(f) = self.frames {
            if f.min == 0 || f.min > f.max {
                return Err(DccError::config("frame counts need 1 <= min <= max"));
            }
        }
        Ok(())
    }
}

/// One sampled scene; `None` roles are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub category: usize,
    pub object: String,
    pub attribute: Option<String>,
    pub verb: Option<String>,
    pub place: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Attribute,
    Verb,
    Place,
}

impl Scene {
    pub fn concepts(&self) -> Vec<&str> {
        std::iter::once(self.object.as_str())
            .chain(self.attribute.as_deref())
            .chain(self.verb.as_deref())
            .chain(self.place.as_deref())
            .collect()
    }

    fn render(&self, templates: &TemplateSet, opener: &str, keep: [bool; 3]) -> Vec<String> {
        let cat = &templates.categories[self.category];
        let mut phrase: Vec<&str> = Vec::new();
        if let (Some(a), true) = (&self.attribute, keep[0]) {
            phrase.push(a);
        }
        phrase.push(&self.object);
        if let (Some(v), true) = (&self.verb, keep[1]) {
            phrase.push(v);
        }
        if let (Some(p), true) = (&self.place, keep[2]) {
            phrase.extend(cat.scene_prep.split_whitespace());
            phrase.push(p);
        }
        opener.replace("{}", &phrase.join(" ")).split_whitespace().map(str::to_owned).collect()
    }
}

/// Draws a scene: uniform category, uniform object, then 0–2 extra roles
/// (count uniform, roles uniform without replacement among those available),
/// each filled with a uniform word.
pub fn sample_scene(rng: &mut Rng, templates: &TemplateSet) -> Scene {
    let category = rng.below(templates.categories.len());
    let cat = &templates.categories[category];
    let object = cat.objects[rng.below(cat.objects.len())].clone();
    let mut roles = Vec::new();
    if !templates.attributes.is_empty() {
        roles.push(Role::Attribute);
    }
    if !cat.verbs.is_empty() {
        roles.push(Role::Verb);
    }
    if !cat.scenes.is_empty() {
        roles.push(Role::Place);
    }
    let extras = rng.below(3).min(roles.len());
    rng.shuffle(&mut roles);
    let mut scene = Scene { category, object, attribute: None, verb: None, place: None };
    for role in &roles[..extras] {
        match role {
            Role::Attribute => scene.attribute = Some(templates.attributes[rng.below(templates.attributes.len())].clone()),
            Role::Verb => scene.verb = Some(cat.verbs[rng.below(cat.verbs.len())].clone()),
            Role::Place => scene.place = Some(cat.scenes[rng.below(cat.scenes.len())].clone()),
        }
    }
    scene
}

/// Everything the generator produces.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub paired: Vec<PairedExample>,
    pub unpaired_images: Vec<UnpairedImageExample>,
    pub unpaired_text: Vec<Vec<String>>,
    /// Captioned examples from the full distribution, held-out words included.
    pub test: Vec<PairedExample>,
    pub concepts: ConceptSet,
    /// Ground-truth F×C map from concepts to features.
    pub projection: Tensor<f32>,
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    concepts: &'a ConceptSet,
    projection: &'a Tensor<f32>,
}

impl Generator<'_> {
    fn visual(&self, rng: &mut Rng, scene: &Scene) -> Visual {
        let f = self.cfg.feature_dim;
        let mut base = vec![0.0f64; f];
        for c in scene.concepts() {
            let r = self.concepts.row(c).expect("scene words are concepts");
            for (i, b) in base.iter_mut().enumerate() {
                *b += self.projection.get(i, r) as f64;
            }
        }
        let noisy = |rng: &mut Rng| -> Vec<f32> {
            base.iter().map(|&b| (b + rng.normal(0.0, self.cfg.noise_std)) as f32).collect()
        };
        match self.cfg.frames {
            None => Visual::Features(noisy(rng)),
            Some(spec) => {
                let n = rng.between(spec.min, spec.max);
                Visual::Frames((0..n).map(|_| noisy(rng)).collect())
            }
        }
    }

    fn captions(&self, rng: &mut Rng, scene: &Scene) -> Vec<Vec<String>> {
        let t = &self.cfg.templates;
        let n = rng.between(2, 5);
        (0..n)
            .map(|i| {
                let opener = &t.openers[rng.below(t.openers.len())];
                // The first caption mentions every concept so labels match the scene.
                let keep = if i == 0 { [true; 3] } else { [rng.bernoulli(0.6), rng.bernoulli(0.6), rng.bernoulli(0.6)] };
                scene.render(t, opener, keep)
            })
            .collect()
    }

    fn paired(&self, rng: &mut Rng, id: String, scene: &Scene) -> PairedExample {
        let visual = self.visual(rng, scene);
        let captions = self.captions(rng, scene);
        PairedExample { id, visual, captions }
    }
}

pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let concepts = ConceptSet::new(
        cfg.templates
            .concept_words()
            .into_iter()
            .map(|w| {
                let novel = cfg.heldout.contains(&w);
                (w, novel)
            }),
    )?;
    let projection = Rng::derived(cfg.seed, "projection").normal_tensor::<f32>(&[cfg.feature_dim, cfg.num_concepts], 1.0);
    let gen = Generator { cfg, concepts: &concepts, projection: &projection };
    let t = &cfg.templates;

    let mut rng = Rng::derived(cfg.seed, "paired");
    let mut paired = Vec::with_capacity(cfg.num_paired);
    let mut attempts = 0usize;
    while paired.len() < cfg.num_paired {
        attempts += 1;
        if attempts > 100 * cfg.num_paired {
            return Err(DccError::config("could not sample enough paired examples without held-out words"));
        }
        let scene = sample_scene(&mut rng, t);
        if scene.concepts().iter().any(|c| cfg.heldout.iter().any(|h| h == c)) {
            continue;
        }
        paired.push(gen.paired(&mut rng, format!("paired-{:06}", paired.len()), &scene));
    }

    let mut rng = Rng::derived(cfg.seed, "unpaired-images");
    let unpaired_images = (0..cfg.num_unpaired_images)
        .map(|i| {
            let scene = sample_scene(&mut rng, t);
            let visual = gen.visual(&mut rng, &scene);
            let mut labels: Vec<String> = scene.concepts().into_iter().map(str::to_owned).collect();
            labels.sort_by_key(|l| concepts.row(l));
            UnpairedImageExample { id: format!("image-{i:06}"), visual, labels }
        })
        .collect();

    let mut rng = Rng::derived(cfg.seed, "unpaired-text");
    let unpaired_text = (0..cfg.num_unpaired_text)
        .map(|_| {
            let scene = sample_scene(&mut rng, t);
            let opener = &t.openers[rng.below(t.openers.len())];
            scene.render(t, opener, [true; 3])
        })
        .collect();

    let mut rng = Rng::derived(cfg.seed, "test");
    let test = (0..cfg.num_test)
        .map(|i| {
            let scene = sample_scene(&mut rng, t);
            gen.paired(&mut rng, format!("test-{i:06}"), &scene)
        })
        .collect();

    Ok(SyntheticDataset { paired, unpaired_images, unpaired_text, test, concepts, projection })
}

impl SyntheticDataset {
    /// Writes `paired.jsonl`, `unpaired_images.jsonl`, `unpaired_text.txt`,
    /// `test.jsonl`, `concepts.json` and `projection.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_paired(&self.paired, &dir.join("paired.jsonl"))?;
        save_unpaired_images(&self.unpaired_images, &dir.join("unpaired_images.jsonl"))?;
        save_text(&self.unpaired_text, &dir.join("unpaired_text.txt"))?;
        save_paired(&self.test, &dir.join("test.jsonl"))?;
        save_concepts(&self.concepts, &dir.join("concepts.json"))?;
        let proj = serde_json::json!({
            "rows": self.projection.rows(),
            "cols": self.projection.cols(),
            "data": self.projection.data(),
        });
        fs::write(dir.join("projection.json"), serde_json::to_string(&proj)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { num_paired: 50, num_unpaired_images: 40, num_unpaired_text: 60, num_test: 20, ..Default::default() }
    }

    #[test]
    fn default_config_is_valid() {
        SyntheticConfig::default().validate().unwrap();
        assert_eq!(TemplateSet::default().concept_words().len(), 12);
    }

    #[test]
    fn config_errors() {
        let mut c = small();
        c.heldout = vec!["otter".into()];
        assert!(matches!(generate_synthetic_dataset(&c), Err(DccError::Config(_))));
        let mut c = small();
        c.num_test = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.num_concepts = 11;
        assert!(c.validate().is_err());
    }

    #[test]
    fn scene_has_one_to_three_concepts() {
        let t = TemplateSet::default();
        let mut rng = Rng::new(3);
        for _ in 0..500 {
            let s = sample_scene(&mut rng, &t);
            let n = s.concepts().len();
            assert!((1..=3).contains(&n), "{s:?}");
        }
    }

    #[test]
    fn captions_two_to_five_and_object_always_present() {
        let d = generate_synthetic_dataset(&small()).unwrap();
        for e in d.paired.iter().chain(&d.test) {
            assert!((2..=5).contains(&e.captions.len()));
        }
        for e in &d.test {
            let objs: Vec<&str> = e.captions[0]
                .iter()
                .map(String::as_str)
                .filter(|w| ["giraffe", "zebra", "elephant", "sandwich", "pizza", "cake"].contains(w))
                .collect();
            assert_eq!(objs.len(), 1);
            assert!(e.captions.iter().all(|c| c.iter().any(|w| w == objs[0])));
        }
    }

    #[test]
    fn video_frames_in_range() {
        let mut c = small();
        c.frames = Some(FrameSpec { min: 3, max: 6 });
        let d = generate_synthetic_dataset(&c).unwrap();
        for e in &d.paired {
            match &e.visual {
                Visual::Frames(fr) => assert!((3..=6).contains(&fr.len())),
                v => panic!("expected frames, got {v:?}"),
            }
        }
    }

    #[test]
    fn concept_frequencies_match_sampler() {
        // Expected rates derived by hand: category and object are uniform; each
        // category has k available extra roles and min(U{0,1,2}, k) of them are
        // drawn, so a given role appears with probability E[min(U, k)] / k.
        let t = TemplateSet::default();
        let mut expected: std::collections::BTreeMap<String, f64> = Default::default();
        let pc = 1.0 / t.categories.len() as f64;
        for cat in &t.categories {
            let k = 1 + usize::from(!cat.verbs.is_empty()) + usize::from(!cat.scenes.is_empty());
            let e_extras = (0..3).map(|u: usize| u.min(k) as f64).sum::<f64>() / 3.0;
            let p_role = e_extras / k as f64;
            for o in &cat.objects {
                *expected.entry(o.clone()).or_default() += pc / cat.objects.len() as f64;
            }
            for a in &t.attributes {
                *expected.entry(a.clone()).or_default() += pc * p_role / t.attributes.len() as f64;
            }
            for v in &cat.verbs {
                *expected.entry(v.clone()).or_default() += pc * p_role / cat.verbs.len() as f64;
            }
            for s in &cat.scenes {
                *expected.entry(s.clone()).or_default() += pc * p_role / cat.scenes.len() as f64;
            }
        }
        let cfg = SyntheticConfig { num_unpaired_images: 6000, ..small() };
        let d = generate_synthetic_dataset(&cfg).unwrap();
        let n = d.unpaired_images.len() as f64;
        for (word, p) in &expected {
            let count = d.unpaired_images.iter().filter(|e| e.labels.contains(word)).count() as f64;
            let ratio = count / (n * p);
            assert!((0.8..=1.2).contains(&ratio), "{word}: observed {count}, expected {:.0}", n * p);
        }
    }

    #[test]
    fn seeds_control_output() {
        let dir = tempfile::tempdir().unwrap();
        let read_all = |d: &Path| -> Vec<Vec<u8>> {
            ["paired.jsonl", "unpaired_images.jsonl", "unpaired_text.txt", "test.jsonl", "concepts.json"]
                .iter()
                .map(|f| std::fs::read(d.join(f)).unwrap())
                .collect()
        };
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        generate_synthetic_dataset(&small()).unwrap().save(&a).unwrap();
        generate_synthetic_dataset(&small()).unwrap().save(&b).unwrap();
        assert_eq!(read_all(&a), read_all(&b));
        let other = generate_synthetic_dataset(&SyntheticConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(other.projection, generate_synthetic_dataset(&small()).unwrap().projection);
    }
}
