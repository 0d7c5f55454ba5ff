//! Procedural road scenes, templated commands and ground-truth regions.
//!
//! Every sample is a pure function of its seed. Images and masks are made by
//! casting rays through [`CameraModel::synthetic`], the same camera the
//! planner uses to lift predicted regions back onto the ground.

mod command;
mod region;
mod render;

pub use command::{synthesize_command, tokenize, verbose, word_count, Tokens, Vocab, PAD, UNK};
pub use region::{region_for, synthesize_mask};
pub use render::{colorize, label_scene, object_box, render_scene, Label, LabelMap};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};
use crate::planner::{CameraModel, GroundScene, Rect};
use crate::rng::{mix, rng, Rng};

pub const LANE_WIDTH: f64 = 3.5;
/// Longitudinal spacing of object slots.
pub const SLOT_SPACING: f64 = 6.0;
/// Gap between the road edge and objects standing beside it.
const SHOULDER_GAP: f64 = 0.1;
/// Obstacle inflation used for region clearance, matching the planner.
pub const CLEARANCE: f64 = 0.3;
const MIN_MASK_PIXELS: usize = 6;
const MIN_REFERENT_PIXELS: usize = 3;
const SCENE_ATTEMPTS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[serde(rename = "stop_park")]
    Park,
    Follow,
    Turn,
    #[serde(rename = "maintain_course")]
    Maintain,
    #[serde(rename = "go_slow_fast")]
    Speed,
    #[serde(rename = "change_lanes")]
    LaneChange,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Park,
        Action::Follow,
        Action::Turn,
        Action::Maintain,
        Action::Speed,
        Action::LaneChange,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Action::Park => "stop_park",
            Action::Follow => "follow",
            Action::Turn => "turn",
            Action::Maintain => "maintain_course",
            Action::Speed => "go_slow_fast",
            Action::LaneChange => "change_lanes",
        }
    }

    pub fn needs_referent(self) -> bool {
        matches!(self, Action::Park | Action::Follow | Action::Speed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Truck,
    Van,
    Bin,
    Person,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Van,
        ObjectClass::Bin,
        ObjectClass::Person,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Van => "van",
            ObjectClass::Bin => "bin",
            ObjectClass::Person => "person",
        }
    }

    /// Width (X), length (Y) and height in metres.
    pub fn dims(self) -> (f64, f64, f64) {
        match self {
            ObjectClass::Car => (1.8, 4.2, 1.5),
            ObjectClass::Truck => (2.5, 7.0, 3.2),
            ObjectClass::Van => (2.0, 5.0, 2.2),
            ObjectClass::Bin => (0.6, 0.6, 1.1),
            ObjectClass::Person => (0.5, 0.5, 1.75),
        }
    }

    pub fn is_vehicle(self) -> bool {
        matches!(self, ObjectClass::Car | ObjectClass::Truck | ObjectClass::Van)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Yellow,
    White,
    Black,
    Green,
    Blue,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Yellow,
        Color::White,
        Color::Black,
        Color::Green,
        Color::Blue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Black => "black",
            Color::Green => "green",
            Color::Blue => "blue",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 30, 30],
            Color::Yellow => [230, 210, 40],
            Color::White => [250, 250, 250],
            Color::Black => [20, 20, 20],
            Color::Green => [30, 160, 50],
            Color::Blue => [30, 60, 220],
        }
    }
}

/// Where an object stands: on the left or right shoulder, or in the ego lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Center,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: ObjectClass,
    pub color: Color,
    pub side: Side,
    /// 1..=4, centred at `SLOT_SPACING * slot` metres ahead.
    pub slot: u8,
    pub footprint: Rect,
}

impl SceneObject {
    pub fn place(class: ObjectClass, color: Color, side: Side, slot: u8, scene: &SceneSpec) -> Self {
        let (w, l, _) = class.dims();
        let x = match side {
            Side::Left => scene.road_x_min() - SHOULDER_GAP - w / 2.0,
            Side::Right => scene.road_x_max() + SHOULDER_GAP + w / 2.0,
            Side::Center => 0.0,
        };
        SceneObject {
            class,
            color,
            side,
            slot,
            footprint: Rect::centered(x, SLOT_SPACING * slot as f64, w, l),
        }
    }
}

/// A straight road with the ego lane centred on X = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub lanes: usize,
    /// For two-lane roads, whether the second lane is left of the ego lane.
    pub extra_lane_left: bool,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn road_x_min(&self) -> f64 {
        let left_lanes = match self.lanes {
            3 => 1,
            2 if self.extra_lane_left => 1,
            _ => 0,
        };
        -LANE_WIDTH / 2.0 - left_lanes as f64 * LANE_WIDTH
    }

    pub fn road_x_max(&self) -> f64 {
        self.road_x_min() + self.lanes as f64 * LANE_WIDTH
    }

    /// X extent of the lane next to the ego lane in `dir`, if there is one.
    pub fn adjacent_lane(&self, dir: Direction) -> Option<(f64, f64)> {
        let h = LANE_WIDTH / 2.0;
        match dir {
            Direction::Left if self.road_x_min() < -h => Some((-h - LANE_WIDTH, -h)),
            Direction::Right if self.road_x_max() > h => Some((h, h + LANE_WIDTH)),
            _ => None,
        }
    }

    pub fn ground_scene(&self) -> GroundScene {
        GroundScene::new(self.objects.iter().map(|o| o.footprint).collect())
    }

    /// Random road with 2 to 5 distinct, non-overlapping objects.
    pub fn sample(seed: u64) -> Self {
        let mut r = rng(seed);
        let lanes = if r.gen_bool(0.6) { 3 } else { 2 };
        let mut scene = SceneSpec {
            seed,
            lanes,
            extra_lane_left: r.gen_bool(0.5),
            objects: vec![],
        };
        let target = r.gen_range(2..=5);
        for _ in 0..40 {
            if scene.objects.len() == target {
                break;
            }
            let class = *ObjectClass::ALL.choose(&mut r).unwrap();
            let color = *Color::ALL.choose(&mut r).unwrap();
            let side = *[Side::Left, Side::Right, Side::Center].choose(&mut r).unwrap();
            let slot = r.gen_range(1..=4u8);
            if scene.objects.iter().any(|o| o.class == class && o.color == color) {
                continue;
            }
            if side == Side::Center
                && (!class.is_vehicle() || scene.objects.iter().any(|o| o.side == Side::Center))
            {
                continue;
            }
            let obj = SceneObject::place(class, color, side, slot, &scene);
            let clear = scene
                .objects
                .iter()
                .all(|o| !o.footprint.inflate(CLEARANCE).overlaps(&obj.footprint.inflate(CLEARANCE)));
            if clear {
                scene.objects.push(obj);
            }
        }
        scene
    }
}

/// One generated example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub seed: u64,
    pub scene: SceneSpec,
    pub action: Action,
    pub referent: Option<usize>,
    pub direction: Option<Direction>,
    pub command: String,
    pub region: Rect,
    pub image: RgbImage,
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub image_size: usize,
    /// Pad commands with distractor clauses to spread word counts.
    pub verbose: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_size: 64,
            verbose: false,
        }
    }
}

/// Tries to realize `action` in `scene`; `None` when the scene has no
/// eligible referent or the region would be blocked or barely visible.
fn realize(
    scene: &SceneSpec,
    action: Action,
    r: &mut Rng,
    cam: &CameraModel,
    size: usize,
) -> Option<(Option<usize>, Option<Direction>, Rect, LabelMap, Mask)> {
    let map = label_scene(scene, cam, size, size);
    let referent = if action.needs_referent() {
        let eligible: Vec<usize> = (0..scene.objects.len())
            .filter(|&i| {
                let o = &scene.objects[i];
                let ok = match action {
                    Action::Park => o.side != Side::Center,
                    Action::Follow => o.side == Side::Center,
                    _ => true,
                };
                ok && map.count(Label::Object(i)) >= MIN_REFERENT_PIXELS
            })
            .collect();
        Some(*eligible.choose(r)?)
    } else {
        None
    };
    let direction = match action {
        Action::Turn => Some(*[Direction::Left, Direction::Right].choose(r).unwrap()),
        Action::LaneChange => {
            let dirs: Vec<Direction> = [Direction::Left, Direction::Right]
                .into_iter()
                .filter(|&d| scene.adjacent_lane(d).is_some())
                .collect();
            Some(*dirs.choose(r)?)
        }
        _ => None,
    };
    let region = region_for(scene, action, referent, direction)?;
    if region.length() < 1.0 || region.width() < 0.5 {
        return None;
    }
    if scene
        .objects
        .iter()
        .any(|o| o.footprint.inflate(CLEARANCE).overlaps(&region))
    {
        return None;
    }
    let mask = synthesize_mask(&map, cam, &region);
    (mask.count() >= MIN_MASK_PIXELS).then_some((referent, direction, region, map, mask))
}

/// Generates the sample for `seed`. The action is drawn uniformly; scenes are
/// resampled until the action can be realized, and after repeated failure a
/// new action is drawn.
pub fn generate_sample(seed: u64, cfg: &GenConfig) -> Sample {
    let mut r = rng(seed);
    let cam = CameraModel::synthetic(cfg.image_size);
    let mut attempt = 0u64;
    loop {
        let action = *Action::ALL.choose(&mut r).unwrap();
        for _ in 0..SCENE_ATTEMPTS {
            let scene = SceneSpec::sample(mix(seed, attempt));
            attempt += 1;
            let Some((referent, direction, region, map, mask)) =
                realize(&scene, action, &mut r, &cam, cfg.image_size)
            else {
                continue;
            };
            let template = r.gen_range(0..3);
            let obj = referent.map(|i| &scene.objects[i]);
            let mut command = synthesize_command(action, obj, direction, template)
                .expect("realize supplies what the template needs");
            if cfg.verbose {
                command = verbose(&command, &mut r);
            }
            let image = colorize(&scene, &map);
            return Sample {
                seed,
                scene,
                action,
                referent,
                direction,
                command,
                region,
                image,
                mask,
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

pub fn sample_seed(global_seed: u64, split: Split, index: usize) -> u64 {
    mix(mix(global_seed, split.index()), index as u64)
}

/// One line of `manifest.jsonl`; paths are relative to the split directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub meta: String,
    pub command: String,
    pub action: Action,
    pub word_count: usize,
    pub seed: u64,
}

/// Per-sample metadata file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub command: String,
    pub action: Action,
    pub referent: Option<usize>,
    pub direction: Option<Direction>,
    pub word_count: usize,
    pub image_size: usize,
    pub region: Rect,
    pub scene: SceneSpec,
    pub ground_scene: GroundScene,
}

/// Writes `n` samples of `split` under `dir/<split>/` plus `dir/vocab.txt`.
pub fn generate_dataset(dir: &Path, split: Split, n: usize, seed: u64, cfg: &GenConfig) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::Contract("dataset size must be at least 1".into()));
    }
    let split_dir = dir.join(split.name());
    std::fs::create_dir_all(&split_dir)?;
    Vocab::standard().save(&dir.join("vocab.txt"))?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(split_dir.join("manifest.jsonl"))?);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let s = generate_sample(sample_seed(seed, split, i), cfg);
        let id = format!("{}_{i:05}", split.name());
        let entry = ManifestEntry {
            image: format!("{id}.ppm"),
            mask: format!("{id}.pgm"),
            meta: format!("{id}.json"),
            id: id.clone(),
            command: s.command.clone(),
            action: s.action,
            word_count: word_count(&s.command),
            seed: s.seed,
        };
        s.image.write_ppm(&split_dir.join(&entry.image))?;
        s.mask.write_pgm(&split_dir.join(&entry.mask))?;
        let meta = SampleMeta {
            id,
            seed: s.seed,
            command: s.command.clone(),
            action: s.action,
            referent: s.referent,
            direction: s.direction,
            word_count: entry.word_count,
            image_size: cfg.image_size,
            region: s.region,
            ground_scene: s.scene.ground_scene(),
            scene: s.scene,
        };
        std::fs::write(split_dir.join(&entry.meta), serde_json::to_string_pretty(&meta)? + "\n")?;
        writeln!(manifest, "{}", serde_json::to_string(&entry)?)?;
        entries.push(entry);
    }
    manifest.flush()?;
    Ok(entries)
}

pub fn read_manifest(split_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = split_dir.join("manifest.jsonl");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// A loaded, tokenized sample ready for the model.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    /// `[3, H, W]` in [0, 1].
    pub image: Vec<f32>,
    pub mask: Mask,
    pub tokens: Tokens,
    pub command: String,
    pub action: Action,
    pub word_count: usize,
    pub meta_path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub image_size: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Loads `dir/<split>` and tokenizes commands to `max_len` against
    /// `dir/vocab.txt`.
    pub fn load(dir: &Path, split: Split, max_len: usize) -> Result<Self> {
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let split_dir = dir.join(split.name());
        let mut examples = vec![];
        let mut image_size = 0;
        for e in read_manifest(&split_dir)? {
            let img = RgbImage::read_ppm(&split_dir.join(&e.image))?;
            let mask = Mask::read_pgm(&split_dir.join(&e.mask))?;
            if img.width != img.height || (mask.width, mask.height) != (img.width, img.height) {
                return Err(Error::Format(format!("{}: image and mask sizes disagree", e.id)));
            }
            if image_size != 0 && img.width != image_size {
                return Err(Error::Format(format!("{}: mixed image sizes in split", e.id)));
            }
            image_size = img.width;
            examples.push(Example {
                image: img.to_chw(),
                mask,
                tokens: tokenize(&e.command, &vocab, max_len),
                meta_path: split_dir.join(&e.meta),
                id: e.id,
                command: e.command,
                action: e.action,
                word_count: e.word_count,
            });
        }
        if examples.is_empty() {
            return Err(Error::Config(format!("{}: empty split", split_dir.display())));
        }
        Ok(Dataset {
            image_size,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, n: usize) -> Dataset {
        Dataset {
            image_size: self.image_size,
            examples: self.examples[..n.min(self.len())].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic() {
        let cfg = GenConfig::default();
        let a = generate_sample(11, &cfg);
        let b = generate_sample(11, &cfg);
        assert_eq!(a.command, b.command);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn scene_invariants_hold() {
        for seed in 0..200 {
            let s = SceneSpec::sample(seed);
            for (i, a) in s.objects.iter().enumerate() {
                for b in &s.objects[i + 1..] {
                    assert!(!a.footprint.overlaps(&b.footprint));
                    assert!((a.class, a.color) != (b.class, b.color));
                }
                assert!(!a.footprint.inflate(CLEARANCE).contains(0.0, 0.0));
            }
            assert!(s.objects.iter().filter(|o| o.side == Side::Center).count() <= 1);
        }
    }

    #[test]
    fn masks_are_nonempty_on_road_and_clear_of_obstacles() {
        let cfg = GenConfig::default();
        let cam = CameraModel::synthetic(64);
        for i in 0..60 {
            let s = generate_sample(mix(5, i), &cfg);
            let map = label_scene(&s.scene, &cam, 64, 64);
            assert!(s.mask.count() >= MIN_MASK_PIXELS);
            for p in 0..64 * 64 {
                if s.mask.data[p] {
                    assert!(map.labels[p].is_road());
                }
            }
            for o in &s.scene.objects {
                assert!(!o.footprint.inflate(CLEARANCE).overlaps(&s.region));
            }
        }
    }

    #[test]
    fn maintain_mask_is_centred_and_turn_left_is_left() {
        let cam = CameraModel::synthetic(64);
        let scene = SceneSpec {
            seed: 0,
            lanes: 3,
            extra_lane_left: false,
            objects: vec![],
        };
        let map = label_scene(&scene, &cam, 64, 64);
        let region = region_for(&scene, Action::Maintain, None, None).unwrap();
        let (_, col) = synthesize_mask(&map, &cam, &region).centroid().unwrap();
        assert!((col + 0.5 - 32.0).abs() <= 2.0, "{col}");
        let region = region_for(&scene, Action::Turn, None, Some(Direction::Left)).unwrap();
        let m = synthesize_mask(&map, &cam, &region);
        assert!(m.count() > 0);
        for p in 0..64 * 64 {
            if m.data[p] {
                assert!(p % 64 < 32);
            }
        }
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = generate_dataset(dir.path(), Split::Val, 1, 7, &GenConfig::default()).unwrap();
        assert_eq!(entries.len(), 1);
        let split_dir = dir.path().join("val");
        for f in [&entries[0].image, &entries[0].mask, &entries[0].meta] {
            assert!(split_dir.join(f).exists());
        }
        assert_eq!(read_manifest(&split_dir).unwrap(), entries);
        let ds = Dataset::load(dir.path(), Split::Val, 12).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.image_size, 64);
        let scene = GroundScene::load(&split_dir.join(&entries[0].meta)).unwrap();
        assert_eq!(scene.bounds, Rect::new(-8.0, 8.0, 0.0, 30.0));
    }
}
