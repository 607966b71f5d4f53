//! Synthetic stylistic-captioning world.
//!
//! Each example is a latent scene (subject, action, setting). The factual
//! caption spells the scene as three tokens; the stylized caption inserts
//! 2..=4 marker tokens from the style's own lexicon at random positions. The
//! image is a one-hot encoding of the scene plus Gaussian noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Reserved end-of-sequence token id.
pub const EOS: usize = 0;
/// Longest caption, EOS excluded.
pub const MAX_CAPTION_TOKENS: usize = 128;

const SYNTH_STREAM: u64 = 0x5359_4e54;
const SPLIT_STREAM: u64 = 0x5350_4c54;
const SUBSET_STREAM: u64 = 0x5355_4253;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Factual,
    Humor,
    Romantic,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Factual, Style::Humor, Style::Romantic];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Factual => "factual",
            Style::Humor => "humor",
            Style::Romantic => "romantic",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factual" => Ok(Style::Factual),
            "humor" => Ok(Style::Humor),
            "romantic" => Ok(Style::Romantic),
            other => Err(Error::Schema {
                field: "style".into(),
                message: format!("unknown style {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneAttributes {
    pub subject: usize,
    pub action: usize,
    pub setting: usize,
}

/// Image stand-in: a fixed-width feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageFeatures(pub Vec<f64>);

impl ImageFeatures {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Token ids ending in exactly one [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Caption(Vec<usize>);

impl Caption {
    /// Append EOS to `tokens` (which must not contain it).
    pub fn from_tokens(tokens: &[usize]) -> Result<Self> {
        let mut ids = tokens.to_vec();
        ids.push(EOS);
        Self::from_ids(ids)
    }

    /// Validate a full id sequence, EOS included.
    pub fn from_ids(ids: Vec<usize>) -> Result<Self> {
        match ids.split_last() {
            Some((&EOS, body)) if !body.is_empty() && body.len() <= MAX_CAPTION_TOKENS => {
                if body.contains(&EOS) {
                    Err(Error::contract("EOS may only appear as the final token"))
                } else {
                    Ok(Self(ids))
                }
            }
            Some((&EOS, body)) => Err(Error::contract(format!(
                "caption must hold 1..={MAX_CAPTION_TOKENS} tokens before EOS, got {}",
                body.len()
            ))),
            _ => Err(Error::contract("caption must end with EOS")),
        }
    }

    /// Decoder output: may be empty before EOS.
    pub(crate) fn generated(mut tokens: Vec<usize>) -> Self {
        debug_assert!(tokens.len() <= MAX_CAPTION_TOKENS && !tokens.contains(&EOS));
        tokens.push(EOS);
        Self(tokens)
    }

    /// All ids including the trailing EOS.
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// Ids before EOS.
    pub fn body(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }

    /// Token count including EOS.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<usize>> for Caption {
    type Error = Error;

    fn try_from(ids: Vec<usize>) -> Result<Self> {
        Self::from_ids(ids)
    }
}

impl From<Caption> for Vec<usize> {
    fn from(c: Caption) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceTriplet {
    pub example_id: String,
    pub image: ImageFeatures,
    /// Dispreferred caption.
    pub factual: Caption,
    /// Preferred caption.
    pub stylized: Caption,
    pub style: Style,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_examples: usize,
    pub style: Style,
    pub n_subjects: usize,
    pub n_actions: usize,
    pub n_settings: usize,
    /// Markers per style lexicon.
    pub lexicon_size: usize,
    pub min_markers: usize,
    pub max_markers: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_examples: 2601,
            style: Style::Humor,
            n_subjects: 5,
            n_actions: 5,
            n_settings: 5,
            lexicon_size: 24,
            min_markers: 2,
            max_markers: 4,
            vocab_size: 64,
            feature_dim: 16,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

/// Token-id layout shared by every world with the same slot sizes:
/// `[EOS | subjects | actions | settings | humor markers | romantic markers | unused]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub n_subjects: usize,
    pub n_actions: usize,
    pub n_settings: usize,
    pub lexicon_size: usize,
}

impl TokenLayout {
    pub fn subject(&self, i: usize) -> usize {
        1 + i
    }

    pub fn action(&self, i: usize) -> usize {
        1 + self.n_subjects + i
    }

    pub fn setting(&self, i: usize) -> usize {
        1 + self.n_subjects + self.n_actions + i
    }

    fn marker_base(&self, style: Style) -> Option<usize> {
        let first = 1 + self.n_subjects + self.n_actions + self.n_settings;
        match style {
            Style::Factual => None,
            Style::Humor => Some(first),
            Style::Romantic => Some(first + self.lexicon_size),
        }
    }

    /// Marker token ids of `style` (empty for factual).
    pub fn markers(&self, style: Style) -> std::ops::Range<usize> {
        match self.marker_base(style) {
            Some(b) => b..b + self.lexicon_size,
            None => 0..0,
        }
    }

    pub fn is_marker(&self, token: usize) -> bool {
        self.markers(Style::Humor).contains(&token) || self.markers(Style::Romantic).contains(&token)
    }

    /// Smallest vocabulary hosting the layout.
    pub fn min_vocab(&self) -> usize {
        1 + self.n_subjects + self.n_actions + self.n_settings + 2 * self.lexicon_size
    }
}

impl WorldConfig {
    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            n_subjects: self.n_subjects,
            n_actions: self.n_actions,
            n_settings: self.n_settings,
            lexicon_size: self.lexicon_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_examples == 0 {
            return cfg("n_examples must be at least 1".into());
        }
        if self.style == Style::Factual {
            return cfg("world style must be humor or romantic".into());
        }
        if self.n_subjects == 0 || self.n_actions == 0 || self.n_settings == 0 || self.lexicon_size == 0 {
            return cfg("every attribute slot and the marker lexicon need at least one entry".into());
        }
        if self.min_markers == 0 || self.min_markers > self.max_markers {
            return cfg(format!(
                "marker count range {}..={} must be non-empty and start at 1 or more",
                self.min_markers, self.max_markers
            ));
        }
        if 3 + self.max_markers > MAX_CAPTION_TOKENS {
            return cfg("stylized captions would exceed the caption length limit".into());
        }
        let need = self.layout().min_vocab();
        if self.vocab_size < need {
            return cfg(format!(
                "vocab_size {} cannot host the token layout (needs {need})",
                self.vocab_size
            ));
        }
        let feat = self.n_subjects + self.n_actions + self.n_settings;
        if self.feature_dim < feat {
            return cfg(format!(
                "feature_dim {} cannot host {feat} one-hot scene dimensions",
                self.feature_dim
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return cfg("noise_std must be finite and nonnegative".into());
        }
        Ok(())
    }
}

fn render_example(cfg: &WorldConfig, index: usize, rng: &mut SplitMix64) -> PreferenceTriplet {
    let layout = cfg.layout();
    let scene = SceneAttributes {
        subject: rng.below(cfg.n_subjects),
        action: rng.below(cfg.n_actions),
        setting: rng.below(cfg.n_settings),
    };

    let mut features: Vec<f64> = (0..cfg.feature_dim).map(|_| cfg.noise_std * rng.gaussian()).collect();
    features[scene.subject] += 1.0;
    features[cfg.n_subjects + scene.action] += 1.0;
    features[cfg.n_subjects + cfg.n_actions + scene.setting] += 1.0;

    let factual = vec![
        layout.subject(scene.subject),
        layout.action(scene.action),
        layout.setting(scene.setting),
    ];
    let mut stylized = factual.clone();
    let markers = layout.markers(cfg.style);
    let n_markers = rng.range_inclusive(cfg.min_markers, cfg.max_markers);
    for _ in 0..n_markers {
        let marker = markers.start + rng.below(markers.len());
        let at = rng.below(stylized.len() + 1);
        stylized.insert(at, marker);
    }

    PreferenceTriplet {
        example_id: format!("{}-{index:06}", cfg.style),
        image: ImageFeatures(features),
        factual: Caption::from_tokens(&factual).expect("template caption is valid"),
        stylized: Caption::from_tokens(&stylized).expect("stylized caption is valid"),
        style: cfg.style,
    }
}

/// Generate `cfg.n_examples` triplets; a pure function of `(cfg, seed)`.
pub fn synthesize_dataset(cfg: &WorldConfig, seed: u64) -> Result<Vec<PreferenceTriplet>> {
    cfg.validate()?;
    Ok((0..cfg.n_examples)
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed(&[SYNTH_STREAM, seed, i as u64]));
            render_example(cfg, i, &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<PreferenceTriplet>,
    pub validation: Vec<PreferenceTriplet>,
    pub test: Vec<PreferenceTriplet>,
    pub split_seed: u64,
}

/// Seeded permutation followed by contiguous train/val/test slices.
pub fn split_dataset(data: &[PreferenceTriplet], sizes: SplitSizes, split_seed: u64) -> Result<DatasetSplits> {
    if sizes.total() != data.len() {
        return Err(Error::Config(format!(
            "split sizes {}+{}+{} = {} do not match dataset size {}",
            sizes.train,
            sizes.val,
            sizes.test,
            sizes.total(),
            data.len()
        )));
    }
    let perm = SplitMix64::new(derive_seed(&[SPLIT_STREAM, split_seed])).permutation(data.len());
    let mut it = perm.into_iter().map(|i| data[i].clone());
    let train = it.by_ref().take(sizes.train).collect();
    let validation = it.by_ref().take(sizes.val).collect();
    let test = it.collect();
    Ok(DatasetSplits {
        train,
        validation,
        test,
        split_seed,
    })
}

/// Number of examples a budget keeps out of `n`.
pub fn budget_count(budget_percent: f64, n: usize) -> usize {
    (budget_percent * n as f64 / 100.0).round() as usize
}

/// First `round(budget * N / 100)` elements of a `subset_seed`-keyed
/// permutation. The permutation ignores the budget, so subsets are nested.
pub fn truncate_train(
    train: &[PreferenceTriplet],
    budget_percent: f64,
    subset_seed: u64,
) -> Result<Vec<PreferenceTriplet>> {
    if !(budget_percent > 0.0 && budget_percent <= 100.0) {
        return Err(Error::Range(format!(
            "budget {budget_percent}% outside (0, 100]"
        )));
    }
    let keep = budget_count(budget_percent, train.len());
    let perm = SplitMix64::new(derive_seed(&[SUBSET_STREAM, subset_seed])).permutation(train.len());
    Ok(perm.into_iter().take(keep).map(|i| train[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> WorldConfig {
        WorldConfig {
            n_examples: n,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn caption_validation() {
        assert!(Caption::from_ids(vec![3, 4, EOS]).is_ok());
        assert!(Caption::from_ids(vec![EOS]).is_err());
        assert!(Caption::from_ids(vec![3, 4]).is_err());
        assert!(Caption::from_ids(vec![3, EOS, 4, EOS]).is_err());
        assert!(Caption::from_tokens(&[7; MAX_CAPTION_TOKENS]).is_ok());
        assert!(Caption::from_tokens(&[7; MAX_CAPTION_TOKENS + 1]).is_err());
    }

    #[test]
    fn vocab_too_small_is_a_config_error() {
        let cfg = WorldConfig {
            vocab_size: 30,
            ..small(4)
        };
        assert!(matches!(synthesize_dataset(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn feature_dim_too_small_is_a_config_error() {
        let cfg = WorldConfig {
            feature_dim: 10,
            ..small(4)
        };
        assert!(matches!(synthesize_dataset(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn marker_and_template_structure() {
        let cfg = small(300);
        let layout = cfg.layout();
        for t in synthesize_dataset(&cfg, 3).unwrap() {
            assert_eq!(t.factual.body().len(), 3);
            assert!(t.factual.body().iter().all(|&tok| !layout.is_marker(tok)));
            let markers: Vec<usize> = t.stylized.body().iter().copied().filter(|&x| layout.is_marker(x)).collect();
            assert!((2..=4).contains(&markers.len()));
            assert!(markers.iter().all(|m| layout.markers(Style::Humor).contains(m)));
            let content: Vec<usize> = t.stylized.body().iter().copied().filter(|&x| !layout.is_marker(x)).collect();
            assert_eq!(content, t.factual.body());
            assert_eq!(t.image.dim(), 16);
        }
    }

    #[test]
    fn lexicons_are_disjoint() {
        let l = WorldConfig::default().layout();
        let h = l.markers(Style::Humor);
        let r = l.markers(Style::Romantic);
        assert!(h.end <= r.start);
        assert!(l.markers(Style::Factual).is_empty());
    }

    #[test]
    fn split_size_mismatch_reports_both_totals() {
        let data = synthesize_dataset(&small(10), 0).unwrap();
        let err = split_dataset(&data, SplitSizes { train: 5, val: 2, test: 2 }, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("= 9") && msg.contains("size 10"), "{msg}");
    }

    #[test]
    fn budget_range_is_enforced() {
        let data = synthesize_dataset(&small(10), 0).unwrap();
        assert!(matches!(truncate_train(&data, 0.0, 1), Err(Error::Range(_))));
        assert!(matches!(truncate_train(&data, 100.5, 1), Err(Error::Range(_))));
        assert!(truncate_train(&data, 100.0, 1).is_ok());
    }
}
