//! Tree-augmented naive Bayes over the five evidence features.
//!
//! The class (correctness) is the parent of every feature, and each feature
//! has at most one additional feature parent. The default structure is the
//! fixed chain
//!
//! ```text
//! df_profile -> difficulty -> skill -> mastery -> sr_profile
//! ```
//!
//! so that
//!
//! ```text
//! P(f | y) = P(df | y) P(diff | y, df) P(skill | y, diff) P(mastery | y, skill) P(sr | y, mastery)
//! ```
//!
//! A Chow-Liu style learner over class-conditional mutual information is
//! available as an alternative. Conditional probability tables are Laplace
//! smoothed, so no entry is ever exactly 0.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{EvidenceRow, DIFFICULTY_LEVELS};
use crate::ids::SkillId;

pub const NUM_FEATURES: usize = 5;
const MODEL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Skill = 0,
    Mastery = 1,
    SrProfile = 2,
    DfProfile = 3,
    Difficulty = 4,
}

impl Feature {
    /// In feature-id order.
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Skill,
        Feature::Mastery,
        Feature::SrProfile,
        Feature::DfProfile,
        Feature::Difficulty,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Skill => "skill",
            Feature::Mastery => "mastery",
            Feature::SrProfile => "sr_profile",
            Feature::DfProfile => "df_profile",
            Feature::Difficulty => "difficulty",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown feature {s:?}")))
    }
}

/// Feature values as category indices, in feature-id order.
pub type Codes = [usize; NUM_FEATURES];

/// Feature-parent links of a TAN. Exactly one feature (the root) has no
/// feature parent; every feature is also conditioned on the class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TanStructure {
    parents: [Option<Feature>; NUM_FEATURES],
    order: Vec<Feature>,
}

impl TanStructure {
    /// The fixed chain `df_profile -> difficulty -> skill -> mastery -> sr_profile`.
    pub fn eikt() -> Self {
        let mut parents = [None; NUM_FEATURES];
        parents[Feature::Difficulty.index()] = Some(Feature::DfProfile);
        parents[Feature::Skill.index()] = Some(Feature::Difficulty);
        parents[Feature::Mastery.index()] = Some(Feature::Skill);
        parents[Feature::SrProfile.index()] = Some(Feature::Mastery);
        TanStructure::from_parents(parents).expect("chain is a tree")
    }

    /// Validate that `parents` describes a single directed tree.
    pub fn from_parents(parents: [Option<Feature>; NUM_FEATURES]) -> Result<Self> {
        let roots: Vec<Feature> = Feature::ALL
            .into_iter()
            .filter(|f| parents[f.index()].is_none())
            .collect();
        if roots.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "structure must have exactly one root feature, found {}",
                roots.len()
            )));
        }
        if Feature::ALL.iter().any(|&f| parents[f.index()] == Some(f)) {
            return Err(Error::InvalidInput(
                "feature cannot be its own parent".into(),
            ));
        }
        // Breadth-first from the root, children in feature-id order.
        let mut order = vec![roots[0]];
        let mut head = 0;
        while head < order.len() {
            let current = order[head];
            head += 1;
            for f in Feature::ALL {
                if parents[f.index()] == Some(current) {
                    order.push(f);
                }
            }
        }
        if order.len() != NUM_FEATURES {
            return Err(Error::InvalidInput("structure contains a cycle".into()));
        }
        Ok(TanStructure { parents, order })
    }

    pub fn parent(&self, feature: Feature) -> Option<Feature> {
        self.parents[feature.index()]
    }

    pub fn parents(&self) -> [Option<Feature>; NUM_FEATURES] {
        self.parents
    }

    pub fn root(&self) -> Feature {
        self.order[0]
    }

    /// Topological order; every feature appears after its parent.
    pub fn order(&self) -> &[Feature] {
        &self.order
    }

    /// Undirected edges as `(lower id, higher id)` pairs.
    pub fn undirected_edges(&self) -> BTreeSet<(Feature, Feature)> {
        Feature::ALL
            .into_iter()
            .filter_map(|f| self.parent(f).map(|p| (p.min(f), p.max(f))))
            .collect()
    }
}

impl Default for TanStructure {
    fn default() -> Self {
        TanStructure::eikt()
    }
}

/// P(feature | class, feature parent).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cpt {
    pub feature: Feature,
    pub parent: Option<Feature>,
    pub cardinality: usize,
    /// 1 when there is no feature parent.
    pub parent_cardinality: usize,
    /// Row-major over `(class, parent value, value)`.
    pub table: Vec<f64>,
}

impl Cpt {
    fn offset(&self, y: bool, parent_value: usize) -> usize {
        (usize::from(y) * self.parent_cardinality + parent_value) * self.cardinality
    }

    /// The distribution over this feature for one parent configuration.
    pub fn distribution(&self, y: bool, parent_value: usize) -> &[f64] {
        let start = self.offset(y, parent_value);
        &self.table[start..start + self.cardinality]
    }

    /// Table entry, or `1/cardinality` when the value or the parent
    /// configuration was never part of the training space.
    pub fn prob(&self, y: bool, parent_value: Option<usize>, value: Option<usize>) -> f64 {
        let uniform = 1.0 / self.cardinality as f64;
        let Some(value) = value.filter(|&v| v < self.cardinality) else {
            return uniform;
        };
        let parent_value = match self.parent {
            None => 0,
            Some(_) => match parent_value.filter(|&p| p < self.parent_cardinality) {
                Some(p) => p,
                None => return uniform,
            },
        };
        self.table[self.offset(y, parent_value) + value]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TanModel {
    /// `[P(y=0), P(y=1)]`.
    pub prior: [f64; 2],
    pub structure: TanStructure,
    pub cardinalities: [usize; NUM_FEATURES],
    /// Indexed by [`Feature::index`].
    pub cpts: Vec<Cpt>,
    pub alpha: f64,
    pub train_rows: usize,
    /// Sorted skill vocabulary; the skill code is the position in this list.
    pub skills: Vec<SkillId>,
    pub seed: Option<u64>,
}

/// Per-feature factor of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Factor {
    pub feature: Feature,
    pub parent: Option<Feature>,
    /// `None` for a value outside the trained space.
    pub value: Option<usize>,
    /// `[P(value | y=0, parent), P(value | y=1, parent)]`.
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub prior: [f64; 2],
    /// In structure order.
    pub factors: Vec<Factor>,
    /// `[P(y=0, f), P(y=1, f)]`.
    pub joint: [f64; 2],
    pub score: f64,
}

/// Category counts used by both CPT fitting and structure learning.
fn check_cardinalities(cards: &[usize; NUM_FEATURES]) -> Result<()> {
    if cards.contains(&0) {
        return Err(Error::InvalidInput(
            "every feature needs at least one category".into(),
        ));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

impl TanModel {
    /// Fit from already-encoded rows.
    pub fn fit_coded(
        rows: &[(Codes, bool)],
        cardinalities: [usize; NUM_FEATURES],
        structure: TanStructure,
        alpha: f64,
    ) -> Result<TanModel> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_alpha(alpha)?;
        check_cardinalities(&cardinalities)?;
        if let Some((codes, _)) = rows
            .iter()
            .find(|(codes, _)| codes.iter().zip(&cardinalities).any(|(v, c)| v >= c))
        {
            return Err(Error::InvalidInput(format!(
                "codes {codes:?} exceed cardinalities {cardinalities:?}"
            )));
        }

        let positives = rows.iter().filter(|(_, y)| *y).count() as f64;
        let n = rows.len() as f64;
        let p1 = (positives + alpha) / (n + 2.0 * alpha);
        let prior = [1.0 - p1, p1];

        let cpts = Feature::ALL
            .into_iter()
            .map(|feature| {
                let parent = structure.parent(feature);
                let cardinality = cardinalities[feature.index()];
                let parent_cardinality = parent.map_or(1, |p| cardinalities[p.index()]);
                let mut counts = vec![0.0f64; 2 * parent_cardinality * cardinality];
                for (codes, y) in rows {
                    let pv = parent.map_or(0, |p| codes[p.index()]);
                    let idx = (usize::from(*y) * parent_cardinality + pv) * cardinality
                        + codes[feature.index()];
                    counts[idx] += 1.0;
                }
                for config in counts.chunks_mut(cardinality) {
                    let total: f64 = config.iter().sum();
                    let denom = total + alpha * cardinality as f64;
                    for c in config.iter_mut() {
                        *c = (*c + alpha) / denom;
                    }
                }
                Cpt {
                    feature,
                    parent,
                    cardinality,
                    parent_cardinality,
                    table: counts,
                }
            })
            .collect();

        Ok(TanModel {
            prior,
            structure,
            cardinalities,
            cpts,
            alpha,
            train_rows: rows.len(),
            skills: Vec::new(),
            seed: None,
        })
    }

    pub fn cpt(&self, feature: Feature) -> &Cpt {
        &self.cpts[feature.index()]
    }

    /// Map a row onto category indices; values outside the trained space
    /// (e.g. an unseen skill) become `None`.
    pub fn encode(&self, row: &EvidenceRow) -> [Option<usize>; NUM_FEATURES] {
        let mut codes = [None; NUM_FEATURES];
        codes[Feature::Skill.index()] = self.skills.binary_search(&row.skill).ok();
        codes[Feature::Mastery.index()] = Some(row.mastery_bin);
        codes[Feature::SrProfile.index()] = Some(row.sr_bin);
        codes[Feature::DfProfile.index()] = Some(row.df_bin);
        codes[Feature::Difficulty.index()] = Some(usize::from(row.difficulty));
        for (code, &card) in codes.iter_mut().zip(&self.cardinalities) {
            *code = code.filter(|&v| v < card);
        }
        codes
    }

    fn factors(&self, codes: &[Option<usize>; NUM_FEATURES]) -> Vec<Factor> {
        self.structure
            .order()
            .iter()
            .map(|&feature| {
                let cpt = self.cpt(feature);
                let parent_value = cpt.parent.and_then(|p| codes[p.index()]);
                let value = codes[feature.index()];
                Factor {
                    feature,
                    parent: cpt.parent,
                    value,
                    probs: [
                        cpt.prob(false, parent_value, value),
                        cpt.prob(true, parent_value, value),
                    ],
                }
            })
            .collect()
    }

    pub fn joint_coded(&self, codes: &[Option<usize>; NUM_FEATURES], y: bool) -> f64 {
        let mut p = self.prior[usize::from(y)];
        for &feature in self.structure.order() {
            let cpt = self.cpt(feature);
            let parent_value = cpt.parent.and_then(|pf| codes[pf.index()]);
            p *= cpt.prob(y, parent_value, codes[feature.index()]);
        }
        p
    }

    pub fn predict_coded(&self, codes: &[Option<usize>; NUM_FEATURES]) -> f64 {
        let j0 = self.joint_coded(codes, false);
        let j1 = self.joint_coded(codes, true);
        j1 / (j0 + j1)
    }

    pub fn explain(&self, row: &EvidenceRow) -> Explanation {
        let codes = self.encode(row);
        let factors = self.factors(&codes);
        let mut joint = self.prior;
        for factor in &factors {
            joint[0] *= factor.probs[0];
            joint[1] *= factor.probs[1];
        }
        Explanation {
            prior: self.prior,
            factors,
            joint,
            score: joint[1] / (joint[0] + joint[1]),
        }
    }

    /// Human-readable CPT dump.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "TAN model: {} training rows, alpha = {}, P(correct) = {:.4}",
            self.train_rows, self.alpha, self.prior[1]
        );
        let _ = writeln!(out, "structure (class -> every feature):");
        for &f in self.structure.order() {
            match self.structure.parent(f) {
                Some(p) => {
                    let _ = writeln!(out, "  {p} -> {f}");
                }
                None => {
                    let _ = writeln!(out, "  {f} (root)");
                }
            }
        }
        for &f in self.structure.order() {
            let cpt = self.cpt(f);
            let _ = writeln!(out);
            match cpt.parent {
                Some(p) => {
                    let _ = writeln!(out, "P({f} | correct, {p})");
                }
                None => {
                    let _ = writeln!(out, "P({f} | correct)");
                }
            }
            let header: Vec<String> = (0..cpt.cardinality)
                .map(|v| self.value_label(f, v))
                .collect();
            let _ = writeln!(out, "  y  parent  | {}", header.join(" "));
            for y in [false, true] {
                for pv in 0..cpt.parent_cardinality {
                    let parent_label = cpt
                        .parent
                        .map_or_else(|| "-".to_string(), |p| self.value_label(p, pv));
                    let dist: Vec<String> = cpt
                        .distribution(y, pv)
                        .iter()
                        .map(|p| format!("{p:.4}"))
                        .collect();
                    let _ = writeln!(
                        out,
                        "  {}  {parent_label:<6}  | {}",
                        u8::from(y),
                        dist.join(" ")
                    );
                }
            }
        }
        out
    }

    fn value_label(&self, feature: Feature, value: usize) -> String {
        match feature {
            Feature::Skill => self
                .skills
                .get(value)
                .map_or_else(|| value.to_string(), ToString::to_string),
            Feature::SrProfile | Feature::DfProfile
                if value + 1 == self.cardinalities[feature.index()] =>
            {
                "none".into()
            }
            _ => value.to_string(),
        }
    }

    /// Versioned text format with `[meta]`, `[prior]`, `[structure]`,
    /// `[skills]` and one `[cpt <feature>]` section per feature. Floats use
    /// the shortest round-trip representation, so reading back is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = format!("#version={MODEL_VERSION}\n");
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "#seed={seed}");
        }
        let cards: Vec<String> = self.cardinalities.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "[meta]");
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "train_rows={}", self.train_rows);
        let _ = writeln!(out, "cardinalities={}", cards.join(","));
        let _ = writeln!(out, "[prior]");
        let _ = writeln!(out, "{}\t{}", self.prior[0], self.prior[1]);
        let _ = writeln!(out, "[structure]");
        for &f in self.structure.order() {
            let parent = self.structure.parent(f).map_or("-", Feature::name);
            let _ = writeln!(out, "{f}\t{parent}");
        }
        let _ = writeln!(out, "[skills]");
        for s in &self.skills {
            let _ = writeln!(out, "{s}");
        }
        for &f in self.structure.order() {
            let cpt = self.cpt(f);
            let _ = writeln!(out, "[cpt {f}]");
            for y in [false, true] {
                for pv in 0..cpt.parent_cardinality {
                    let _ = write!(out, "{}\t", u8::from(y));
                    if cpt.parent.is_some() {
                        let _ = write!(out, "{pv}");
                    } else {
                        out.push('-');
                    }
                    for p in cpt.distribution(y, pv) {
                        let _ = write!(out, "\t{p}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_text().as_bytes())
    }

    pub fn read<R: BufRead>(input: R) -> Result<TanModel> {
        ModelReader::default().read(input)
    }
}

#[derive(Default)]
struct ModelReader {
    seed: Option<u64>,
    alpha: Option<f64>,
    train_rows: Option<usize>,
    cards: Option<[usize; NUM_FEATURES]>,
    prior: Option<[f64; 2]>,
    parents: Vec<(Feature, Option<Feature>)>,
    skills: Vec<SkillId>,
    tables: Vec<(Feature, Vec<CptRow>)>,
}

/// `(y, parent value, distribution)` as read from a `[cpt]` section.
type CptRow = (bool, Option<usize>, Vec<f64>);

enum Section {
    Meta,
    Prior,
    Structure,
    Skills,
    Cpt,
}

impl ModelReader {
    fn read<R: BufRead>(mut self, input: R) -> Result<TanModel> {
        let mut section: Option<Section> = None;
        let mut saw_version = false;
        let mut last_line = 0;
        for (i, line) in input.lines().enumerate() {
            let n = i + 1;
            last_line = n;
            let line = line.map_err(|e| Error::io("<tan model>", e))?;
            if !saw_version {
                let version = line
                    .strip_prefix("#version=")
                    .ok_or_else(|| Error::format(n, "expected #version header"))?;
                if version != MODEL_VERSION {
                    return Err(Error::VersionMismatch {
                        found: version.into(),
                        expected: MODEL_VERSION.into(),
                    });
                }
                saw_version = true;
                continue;
            }
            if let Some(seed) = line.strip_prefix("#seed=") {
                self.seed = Some(seed.parse().map_err(|_| Error::format(n, "bad seed"))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name {
                    "meta" => Section::Meta,
                    "prior" => Section::Prior,
                    "structure" => Section::Structure,
                    "skills" => Section::Skills,
                    _ => {
                        let feature = name
                            .strip_prefix("cpt ")
                            .ok_or_else(|| Error::format(n, format!("unknown section {name:?}")))?
                            .parse::<Feature>()
                            .map_err(|e| Error::format(n, e.to_string()))?;
                        self.tables.push((feature, Vec::new()));
                        Section::Cpt
                    }
                });
                continue;
            }
            match section {
                None => return Err(Error::format(n, "content before first section")),
                Some(Section::Meta) => self.meta(n, &line)?,
                Some(Section::Prior) => {
                    let v = parse_floats(n, line.split('\t'))?;
                    if v.len() != 2 {
                        return Err(Error::format(n, "prior needs two values"));
                    }
                    self.prior = Some([v[0], v[1]]);
                }
                Some(Section::Structure) => {
                    let (child, parent) = line
                        .split_once('\t')
                        .ok_or_else(|| Error::format(n, "expected feature<TAB>parent"))?;
                    let child = child
                        .parse()
                        .map_err(|e: Error| Error::format(n, e.to_string()))?;
                    let parent = match parent {
                        "-" => None,
                        p => Some(
                            p.parse()
                                .map_err(|e: Error| Error::format(n, e.to_string()))?,
                        ),
                    };
                    self.parents.push((child, parent));
                }
                Some(Section::Skills) => self.skills.push(SkillId::new(line.as_str())),
                Some(Section::Cpt) => {
                    let mut fields = line.split('\t');
                    let y = match fields.next() {
                        Some("0") => false,
                        Some("1") => true,
                        _ => return Err(Error::format(n, "class must be 0 or 1")),
                    };
                    let parent_value = match fields.next() {
                        Some("-") => None,
                        Some(p) => Some(
                            p.parse()
                                .map_err(|_| Error::format(n, "bad parent value"))?,
                        ),
                        None => return Err(Error::format(n, "missing parent value")),
                    };
                    let probs = parse_floats(n, fields)?;
                    let table = self.tables.last_mut().expect("cpt section pushed");
                    table.1.push((y, parent_value, probs));
                }
            }
        }
        if !saw_version {
            return Err(Error::format(0, "empty model file"));
        }
        self.finish(last_line)
    }

    fn meta(&mut self, n: usize, line: &str) -> Result<()> {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(n, "expected key=value"))?;
        match key {
            "alpha" => self.alpha = Some(value.parse().map_err(|_| Error::format(n, "bad alpha"))?),
            "train_rows" => {
                self.train_rows = Some(
                    value
                        .parse()
                        .map_err(|_| Error::format(n, "bad train_rows"))?,
                )
            }
            "cardinalities" => {
                let v: Vec<usize> = value
                    .split(',')
                    .map(|c| c.parse().map_err(|_| Error::format(n, "bad cardinality")))
                    .collect::<Result<_>>()?;
                let cards: [usize; NUM_FEATURES] = v
                    .try_into()
                    .map_err(|_| Error::format(n, "expected five cardinalities"))?;
                self.cards = Some(cards);
            }
            _ => return Err(Error::format(n, format!("unknown meta key {key:?}"))),
        }
        Ok(())
    }

    fn finish(self, n: usize) -> Result<TanModel> {
        let missing = |what: &str| Error::format(n, format!("missing {what}"));
        let cards = self.cards.ok_or_else(|| missing("cardinalities"))?;
        check_cardinalities(&cards).map_err(|e| Error::format(n, e.to_string()))?;
        let mut parents = [None; NUM_FEATURES];
        let mut seen = [false; NUM_FEATURES];
        for (child, parent) in &self.parents {
            if std::mem::replace(&mut seen[child.index()], true) {
                return Err(Error::format(n, format!("feature {child} listed twice")));
            }
            parents[child.index()] = *parent;
        }
        if seen.iter().any(|s| !s) {
            return Err(missing("structure entries"));
        }
        let structure =
            TanStructure::from_parents(parents).map_err(|e| Error::format(n, e.to_string()))?;

        let mut cpts: Vec<Option<Cpt>> = vec![None; NUM_FEATURES];
        for (feature, rows) in self.tables {
            let parent = structure.parent(feature);
            let cardinality = cards[feature.index()];
            let parent_cardinality = parent.map_or(1, |p| cards[p.index()]);
            if rows.len() != 2 * parent_cardinality {
                return Err(Error::format(
                    n,
                    format!("cpt {feature} has {} rows", rows.len()),
                ));
            }
            let mut table = Vec::with_capacity(rows.len() * cardinality);
            for (i, (y, pv, probs)) in rows.into_iter().enumerate() {
                let expected_y = i >= parent_cardinality;
                let expected_pv = parent.map(|_| i % parent_cardinality);
                if y != expected_y || pv != expected_pv || probs.len() != cardinality {
                    return Err(Error::format(
                        n,
                        format!("cpt {feature} row {i} out of order"),
                    ));
                }
                table.extend(probs);
            }
            cpts[feature.index()] = Some(Cpt {
                feature,
                parent,
                cardinality,
                parent_cardinality,
                table,
            });
        }
        let cpts = cpts
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| missing("cpt section"))?;
        if self.skills.len() != cards[Feature::Skill.index()] && !self.skills.is_empty() {
            return Err(Error::format(
                n,
                "skill vocabulary does not match cardinality",
            ));
        }
        Ok(TanModel {
            prior: self.prior.ok_or_else(|| missing("prior"))?,
            structure,
            cardinalities: cards,
            cpts,
            alpha: self.alpha.ok_or_else(|| missing("alpha"))?,
            train_rows: self.train_rows.ok_or_else(|| missing("train_rows"))?,
            skills: self.skills,
            seed: self.seed,
        })
    }
}

fn parse_floats<'a>(n: usize, fields: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|p| (0.0..=1.0).contains(p))
                .ok_or_else(|| Error::format(n, format!("bad probability {f:?}")))
        })
        .collect()
}

/// Cardinalities of the five features for `bins` mastery/profile bins.
pub fn eikt_cardinalities(skills: usize, bins: usize) -> [usize; NUM_FEATURES] {
    let mut cards = [0; NUM_FEATURES];
    cards[Feature::Skill.index()] = skills;
    cards[Feature::Mastery.index()] = bins;
    cards[Feature::SrProfile.index()] = bins + 1;
    cards[Feature::DfProfile.index()] = bins + 1;
    cards[Feature::Difficulty.index()] = DIFFICULTY_LEVELS;
    cards
}

fn vocabulary(rows: &[EvidenceRow]) -> Vec<SkillId> {
    rows.iter()
        .map(|r| r.skill.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn encode_training(
    rows: &[EvidenceRow],
    skills: &[SkillId],
    cards: &[usize; NUM_FEATURES],
) -> Result<Vec<(Codes, bool)>> {
    rows.iter()
        .map(|r| {
            let codes = [
                skills
                    .binary_search(&r.skill)
                    .expect("vocabulary built from rows"),
                r.mastery_bin,
                r.sr_bin,
                r.df_bin,
                usize::from(r.difficulty),
            ];
            if codes.iter().zip(cards).any(|(v, c)| v >= c) {
                return Err(Error::InvalidInput(format!(
                    "row for {} #{} has bins outside the configured range",
                    r.student, r.seq_index
                )));
            }
            Ok((codes, r.label))
        })
        .collect()
}

/// Fit the class prior and the five CPTs with Laplace smoothing `alpha`.
pub fn fit_cpts(
    rows: &[EvidenceRow],
    structure: TanStructure,
    alpha: f64,
    bins: usize,
) -> Result<TanModel> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let skills = vocabulary(rows);
    let cards = eikt_cardinalities(skills.len(), bins);
    let coded = encode_training(rows, &skills, &cards)?;
    let mut model = TanModel::fit_coded(&coded, cards, structure, alpha)?;
    model.skills = skills;
    Ok(model)
}

/// P(y, row) as the product of the prior and the five CPT factors.
pub fn joint_probability(model: &TanModel, row: &EvidenceRow, y: bool) -> f64 {
    model.joint_coded(&model.encode(row), y)
}

/// Posterior probability that the attempt is correct.
pub fn predict(model: &TanModel, row: &EvidenceRow) -> f64 {
    model.predict_coded(&model.encode(row))
}

/// Smoothed class-conditional mutual information I(a; b | y) for every
/// feature pair, indexed `[a][b]`.
pub fn conditional_mutual_information(
    rows: &[(Codes, bool)],
    cards: &[usize; NUM_FEATURES],
    alpha: f64,
) -> [[f64; NUM_FEATURES]; NUM_FEATURES] {
    let mut cmi = [[0.0; NUM_FEATURES]; NUM_FEATURES];
    let n = rows.len() as f64;
    for a in 0..NUM_FEATURES {
        for b in (a + 1)..NUM_FEATURES {
            let (ca, cb) = (cards[a], cards[b]);
            let cells = 2 * ca * cb;
            let mut joint = vec![alpha; cells];
            for (codes, y) in rows {
                joint[(usize::from(*y) * ca + codes[a]) * cb + codes[b]] += 1.0;
            }
            let total = n + alpha * cells as f64;
            joint.iter_mut().for_each(|c| *c /= total);
            let mut value = 0.0;
            for y in 0..2 {
                let block = &joint[y * ca * cb..(y + 1) * ca * cb];
                let py: f64 = block.iter().sum();
                let pa: Vec<f64> = (0..ca)
                    .map(|i| block[i * cb..(i + 1) * cb].iter().sum())
                    .collect();
                let pb: Vec<f64> = (0..cb)
                    .map(|j| (0..ca).map(|i| block[i * cb + j]).sum())
                    .collect();
                for i in 0..ca {
                    for j in 0..cb {
                        let p = block[i * cb + j];
                        value += p * (p * py / (pa[i] * pb[j])).ln();
                    }
                }
            }
            cmi[a][b] = value.max(0.0);
            cmi[b][a] = cmi[a][b];
        }
    }
    cmi
}

/// Maximum-weight spanning tree over the CMI weights, grown from
/// `df_profile` and directed away from it. Ties go to the lower feature ids.
pub fn learn_structure_coded(
    rows: &[(Codes, bool)],
    cards: &[usize; NUM_FEATURES],
    alpha: f64,
) -> Result<TanStructure> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_alpha(alpha)?;
    check_cardinalities(cards)?;
    let weights = conditional_mutual_information(rows, cards, alpha);
    let mut parents = [None; NUM_FEATURES];
    let mut in_tree = [false; NUM_FEATURES];
    in_tree[Feature::DfProfile.index()] = true;
    for _ in 1..NUM_FEATURES {
        let mut best: Option<(f64, Feature, Feature)> = None;
        for from in Feature::ALL.into_iter().filter(|f| in_tree[f.index()]) {
            for to in Feature::ALL.into_iter().filter(|f| !in_tree[f.index()]) {
                let w = weights[from.index()][to.index()];
                if best.is_none_or(|(bw, _, _)| w > bw) {
                    best = Some((w, from, to));
                }
            }
        }
        let (_, from, to) = best.expect("a vertex remains outside the tree");
        parents[to.index()] = Some(from);
        in_tree[to.index()] = true;
    }
    TanStructure::from_parents(parents)
}

/// Learn a TAN structure from evidence rows.
pub fn learn_structure_cmi(rows: &[EvidenceRow], alpha: f64, bins: usize) -> Result<TanStructure> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let skills = vocabulary(rows);
    let cards = eikt_cardinalities(skills.len(), bins);
    let coded = encode_training(rows, &skills, &cards)?;
    learn_structure_coded(&coded, &cards, alpha)
}
