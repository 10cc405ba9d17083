//! Effective experiment settings: preset, then command-line flags, then the
//! config file, which has the last word.
//!
//! Config files are flat `key = value` lines; `#` starts a comment. Lists
//! are comma separated. Unknown keys, and keys the subcommand does not use,
//! are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use dybm::experiments::{MarkovConfig, Scale, SweepConfig, VideoConfig};
use dybm::{DybmError, Method, ModelConfig, TrainConfig};

pub type Pairs = Vec<(String, String)>;

pub fn parse_config_text(text: &str) -> Result<Pairs, DybmError> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(DybmError::Config(format!("line {}: expected key = value", no + 1)));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_config(path: &Path) -> Result<Pairs, DybmError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DybmError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, DybmError> {
    value
        .parse()
        .map_err(|_| DybmError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, DybmError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn bool_value(key: &str, value: &str) -> Result<bool, DybmError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(DybmError::Config(format!("invalid value '{value}' for {key}"))),
    }
}

/// Where video data comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Synthetic,
    File,
}

impl FromStr for Source {
    type Err = DybmError;

    fn from_str(s: &str) -> Result<Self, DybmError> {
        match s {
            "synthetic" => Ok(Source::Synthetic),
            "file" => Ok(Source::File),
            other => Err(DybmError::Config(format!("unknown source '{other}'"))),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Synthetic => "synthetic",
            Source::File => "file",
        })
    }
}

fn apply_model(m: &mut ModelConfig, key: &str, v: &str) -> Result<bool, DybmError> {
    match key {
        "delay_min" => m.delay_min = parse(key, v)?,
        "delay_max" => m.delay_max = parse(key, v)?,
        "synaptic_decays" => m.synaptic_decays = parse_list(key, v)?,
        "neural_decays" => m.neural_decays = parse_list(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_training(t: &mut TrainConfig, key: &str, v: &str) -> Result<bool, DybmError> {
    match key {
        "learning_rate" => t.learning_rate = parse(key, v)?,
        "adam_beta1" => t.adam_beta1 = parse(key, v)?,
        "adam_beta2" => t.adam_beta2 = parse(key, v)?,
        "adam_eps" => t.adam_eps = parse(key, v)?,
        "max_steps_per_sample" => t.max_steps_per_sample = parse(key, v)?,
        "validation_cadence" => t.validation_cadence_epochs = parse(key, v)?,
        "minibatch_size" => t.minibatch_size = parse(key, v)?,
        "stop_tolerance" => t.stop_tolerance = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn render_model(out: &mut String, m: &ModelConfig) {
    let _ = writeln!(out, "delay_min = {}", m.delay_min);
    let _ = writeln!(out, "delay_max = {}", m.delay_max);
    let _ = writeln!(out, "synaptic_decays = {}", join(&m.synaptic_decays));
    let _ = writeln!(out, "neural_decays = {}", join(&m.neural_decays));
}

fn render_training(out: &mut String, t: &TrainConfig) {
    let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
    let _ = writeln!(out, "adam_beta1 = {}", t.adam_beta1);
    let _ = writeln!(out, "adam_beta2 = {}", t.adam_beta2);
    let _ = writeln!(out, "adam_eps = {}", t.adam_eps);
    let _ = writeln!(out, "max_steps_per_sample = {}", t.max_steps_per_sample);
    let _ = writeln!(out, "validation_cadence = {}", t.validation_cadence_epochs);
    let _ = writeln!(out, "minibatch_size = {}", t.minibatch_size);
    let _ = writeln!(out, "stop_tolerance = {}", t.stop_tolerance);
}

fn unknown(cmd: &str, key: &str) -> DybmError {
    DybmError::Config(format!("unknown config key '{key}' for {cmd}"))
}

/// Scale from the config file if present, else the flag, else desk.
pub fn resolve_scale(flag: Option<Scale>, file: &Pairs) -> Result<Scale, DybmError> {
    match file.iter().rev().find(|(k, _)| k == "scale") {
        Some((_, v)) => v.parse(),
        None => Ok(flag.unwrap_or(Scale::Desk)),
    }
}

fn scale_name(s: Scale) -> &'static str {
    match s {
        Scale::Desk => "desk",
        Scale::Paper => "paper",
    }
}

#[derive(Debug, Clone)]
pub struct MarkovSettings {
    pub scale: Scale,
    pub config: MarkovConfig,
}

impl MarkovSettings {
    pub fn build(scale: Scale, seed: u64, pairs: &Pairs) -> Result<Self, DybmError> {
        let mut c = MarkovConfig::preset(scale, seed);
        for (k, v) in pairs {
            let v = v.as_str();
            match k.as_str() {
                "scale" => {}
                "seed" => c.seed = parse(k, v)?,
                "p" => c.prune_prob = parse(k, v)?,
                "p_stay" => c.p_stay = parse(k, v)?,
                "train_steps" => c.train_steps = parse(k, v)?,
                "validation_steps" => c.validation_steps = parse(k, v)?,
                "test_steps" => c.test_steps = parse(k, v)?,
                "train_seq_len" => c.train_seq_len = parse(k, v)?,
                "test_seq_len" => c.test_seq_len = parse(k, v)?,
                "n_dims" => {
                    c.n_dims = parse(k, v)?;
                    c.model.n_units = c.n_dims;
                }
                key => {
                    if !(apply_model(&mut c.model, key, v)? || apply_training(&mut c.training, key, v)?) {
                        return Err(unknown("markov7", key));
                    }
                }
            }
        }
        c.validate()?;
        Ok(MarkovSettings { scale, config: c })
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "scale = {}", scale_name(self.scale));
        let _ = writeln!(out, "seed = {}", c.seed);
        let _ = writeln!(out, "p = {}", c.prune_prob);
        let _ = writeln!(out, "n_dims = {}", c.n_dims);
        let _ = writeln!(out, "p_stay = {}", c.p_stay);
        let _ = writeln!(out, "train_steps = {}", c.train_steps);
        let _ = writeln!(out, "validation_steps = {}", c.validation_steps);
        let _ = writeln!(out, "test_steps = {}", c.test_steps);
        let _ = writeln!(out, "train_seq_len = {}", c.train_seq_len);
        let _ = writeln!(out, "test_seq_len = {}", c.test_seq_len);
        render_model(&mut out, &c.model);
        render_training(&mut out, &c.training);
        out
    }
}

fn apply_video(c: &mut VideoConfig, key: &str, v: &str) -> Result<bool, DybmError> {
    match key {
        "seed" => c.seed = parse(key, v)?,
        "method" => c.method = parse(key, v)?,
        "p" => c.prune_prob = parse(key, v)?,
        "frames" => c.n_input = parse(key, v)?,
        "predict" => c.n_predict = parse(key, v)?,
        "n_train" => c.n_train = parse(key, v)?,
        "n_validation" => c.n_validation = parse(key, v)?,
        "n_test" => c.n_test = parse(key, v)?,
        "patch_size" => c.video.patch_size = parse(key, v)?,
        "downsample" => c.video.downsample = parse(key, v)?,
        "n_frames" => c.video.n_frames = parse(key, v)?,
        "n_sprites" => c.video.n_sprites = parse(key, v)?,
        "sprite_size" => c.video.sprite_size = parse(key, v)?,
        "speed_min" => c.video.speed_min = parse(key, v)?,
        "speed_max" => c.video.speed_max = parse(key, v)?,
        "threshold" => c.video.frame_threshold = parse(key, v)?,
        _ => return Ok(apply_model(&mut c.model, key, v)? || apply_training(&mut c.training, key, v)?),
    }
    Ok(true)
}

/// Model size follows the prepared frame size.
fn fit_model(c: &mut VideoConfig) {
    if c.video.downsample > 0 {
        let side = c.video.frame_side();
        c.model.n_units = side * side;
    }
}

fn render_video(out: &mut String, c: &VideoConfig, with_arm: bool) {
    if with_arm {
        let _ = writeln!(out, "seed = {}", c.seed);
        let _ = writeln!(out, "method = {}", c.method);
        let _ = writeln!(out, "p = {}", c.prune_prob);
    }
    let _ = writeln!(out, "frames = {}", c.n_input);
    let _ = writeln!(out, "predict = {}", c.n_predict);
    let _ = writeln!(out, "n_train = {}", c.n_train);
    let _ = writeln!(out, "n_validation = {}", c.n_validation);
    let _ = writeln!(out, "n_test = {}", c.n_test);
    let v = &c.video;
    let _ = writeln!(out, "patch_size = {}", v.patch_size);
    let _ = writeln!(out, "downsample = {}", v.downsample);
    let _ = writeln!(out, "n_frames = {}", v.n_frames);
    let _ = writeln!(out, "n_sprites = {}", v.n_sprites);
    let _ = writeln!(out, "sprite_size = {}", v.sprite_size);
    let _ = writeln!(out, "speed_min = {}", v.speed_min);
    let _ = writeln!(out, "speed_max = {}", v.speed_max);
    let _ = writeln!(out, "threshold = {}", v.frame_threshold);
    render_model(out, &c.model);
    render_training(out, &c.training);
}

#[derive(Debug, Clone)]
pub struct VideoSettings {
    pub scale: Scale,
    pub config: VideoConfig,
    pub source: Source,
    pub frames_file: Option<String>,
    pub randomize_weights: bool,
}

impl VideoSettings {
    pub fn build(scale: Scale, seed: u64, pairs: &Pairs) -> Result<Self, DybmError> {
        let mut s = VideoSettings {
            scale,
            config: VideoConfig::preset(scale, seed),
            source: Source::Synthetic,
            frames_file: None,
            randomize_weights: false,
        };
        for (k, v) in pairs {
            match k.as_str() {
                "scale" => {}
                "source" => s.source = v.parse()?,
                "frames_file" => s.frames_file = Some(v.clone()),
                "randomize_weights" => s.randomize_weights = bool_value(k, v)?,
                key => {
                    if !apply_video(&mut s.config, key, v)? {
                        return Err(unknown("video", key));
                    }
                }
            }
        }
        fit_model(&mut s.config);
        s.config.validate()?;
        Ok(s)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scale = {}", scale_name(self.scale));
        let _ = writeln!(out, "source = {}", self.source);
        if let Some(f) = &self.frames_file {
            let _ = writeln!(out, "frames_file = {f}");
        }
        let _ = writeln!(out, "randomize_weights = {}", self.randomize_weights);
        render_video(&mut out, &self.config, true);
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub scale: Scale,
    pub config: SweepConfig,
}

impl SweepSettings {
    pub fn build(scale: Scale, pairs: &Pairs) -> Result<Self, DybmError> {
        let mut c = SweepConfig::preset(scale);
        for (k, v) in pairs {
            match k.as_str() {
                "scale" => {}
                "method" | "methods" => c.methods = parse_list::<Method>(k, v)?,
                "p" | "probs" => c.probs = parse_list(k, v)?,
                "seeds" => c.seeds = parse_list(k, v)?,
                // a single seed pins the grid to that seed
                "seed" => c.seeds = vec![parse(k, v)?],
                "source" if v == "synthetic" => {}
                "source" => {
                    return Err(DybmError::Config("sweep supports only --source synthetic".into()))
                }
                key => {
                    if !apply_video(&mut c.video, key, v)? {
                        return Err(unknown("sweep", key));
                    }
                }
            }
        }
        fit_model(&mut c.video);
        if c.methods.is_empty() || c.probs.is_empty() || c.seeds.is_empty() {
            return Err(DybmError::Config("sweep grid is empty".into()));
        }
        if c.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DybmError::Config("sweep probabilities must lie in [0, 1]".into()));
        }
        c.video.validate()?;
        Ok(SweepSettings { scale, config: c })
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "scale = {}", scale_name(self.scale));
        let _ = writeln!(out, "methods = {}", join(&c.methods));
        let _ = writeln!(out, "probs = {}", join(&c.probs));
        let _ = writeln!(out, "seeds = {}", join(&c.seeds));
        render_video(&mut out, &c.video, false);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let p = parse_config_text("# top\n\nseed = 4  # trailing\n p=0.25\n").unwrap();
        assert_eq!(p, vec![("seed".into(), "4".into()), ("p".into(), "0.25".into())]);
        assert!(parse_config_text("seed 4").is_err());
    }

    #[test]
    fn rejects_unknown_and_foreign_keys() {
        let bad = vec![("colour".to_string(), "red".to_string())];
        assert!(MarkovSettings::build(Scale::Desk, 1, &bad).is_err());
        let foreign = vec![("frames".to_string(), "10".to_string())];
        assert!(MarkovSettings::build(Scale::Desk, 1, &foreign).is_err());
        let foreign = vec![("train_steps".to_string(), "10".to_string())];
        assert!(VideoSettings::build(Scale::Desk, 1, &foreign).is_err());
    }

    #[test]
    fn later_pairs_win_and_render_round_trips() {
        let pairs = vec![
            ("p".to_string(), "0.3".to_string()),
            ("p".to_string(), "0.7".to_string()),
            ("neural_decays".to_string(), "0.1, 0.9".to_string()),
        ];
        let s = MarkovSettings::build(Scale::Desk, 9, &pairs).unwrap();
        assert_eq!(s.config.prune_prob, 0.7);
        let again = MarkovSettings::build(Scale::Desk, 0, &parse_config_text(&s.render()).unwrap()).unwrap();
        assert_eq!(again.config, s.config);
    }

    #[test]
    fn video_render_round_trips() {
        let s = VideoSettings::build(Scale::Desk, 3, &vec![("method".into(), "dropconnect".into())]).unwrap();
        let pairs = parse_config_text(&s.render()).unwrap();
        let scale = resolve_scale(Some(Scale::Paper), &pairs).unwrap();
        let again = VideoSettings::build(scale, 0, &pairs).unwrap();
        assert_eq!(again.config, s.config);
        assert_eq!(again.scale, Scale::Desk);
    }

    #[test]
    fn sweep_grid_from_lists() {
        let pairs = vec![
            ("method".to_string(), "delay-prune,dropout".to_string()),
            ("p".to_string(), "0.1,0.5".to_string()),
            ("seeds".to_string(), "1,2,3".to_string()),
        ];
        let s = SweepSettings::build(Scale::Desk, &pairs).unwrap();
        assert_eq!(s.config.cells().len(), 12);
    }
}
