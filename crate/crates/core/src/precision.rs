//! Extraction precision against gold word alignments, and similarity
//! distributions of different pair populations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, read_lines, SentencePair};
use crate::error::{Error, Result};
use crate::extract::AnchoredPair;
use crate::retrieval::run_rng;
use crate::similarity::cosine;
use crate::stats::{mean, std_dev};
use crate::store::LayerSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Sure,
    Possible,
}

pub type Link = (usize, usize);

/// Word alignment per line; links are `(src_pos, tgt_pos)`, 0-based.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    lines: Vec<BTreeMap<Link, LinkKind>>,
}

fn parse_link(token: &str) -> Option<(Link, LinkKind)> {
    let (body, kind) = if let Some((i, j)) = token.split_once('?') {
        ((i, j), LinkKind::Possible)
    } else {
        let mut parts = token.split('-');
        let i = parts.next()?;
        let j = parts.next()?;
        let kind = match parts.next() {
            None => LinkKind::Sure,
            Some("s") | Some("S") => LinkKind::Sure,
            Some("p") | Some("P") => LinkKind::Possible,
            Some(_) => return None,
        };
        if parts.next().is_some() {
            return None;
        }
        match j.strip_suffix(['p', 'P']) {
            Some(j) if kind == LinkKind::Sure => ((i, j), LinkKind::Possible),
            _ => ((i, j), kind),
        }
    };
    let i = body.0.parse().ok()?;
    let j = body.1.parse().ok()?;
    Some(((i, j), kind))
}

impl GoldAlignment {
    /// Parses Pharaoh text: `i-j` is sure; `i?j`, `i-jp` and `i-j-p` are
    /// possible. A link listed both ways counts as sure.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = Vec::new();
        let body = text.strip_suffix('\n').unwrap_or(text);
        if text.is_empty() {
            return Ok(GoldAlignment::default());
        }
        for (n, line) in body.split('\n').enumerate() {
            let mut links = BTreeMap::new();
            for token in line.split_whitespace() {
                let (link, kind) = parse_link(token).ok_or_else(|| {
                    Error::format(origin, n + 1, format!("malformed alignment link {token:?}"))
                })?;
                links
                    .entry(link)
                    .and_modify(|k: &mut LinkKind| *k = (*k).min(kind))
                    .or_insert(kind);
            }
            lines.push(links);
        }
        Ok(GoldAlignment { lines })
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn line(&self, sentence_id: usize) -> Option<&BTreeMap<Link, LinkKind>> {
        self.lines.get(sentence_id)
    }

    pub fn from_lines(lines: Vec<BTreeMap<Link, LinkKind>>) -> Self {
        GoldAlignment { lines }
    }

    /// All links regardless of kind, keyed by sentence.
    pub fn links(&self) -> LinkSet {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| (i, l.keys().copied().collect()))
            .collect()
    }

    /// Canonical Pharaoh text: sorted links, `i-j` for sure and `i?j` for possible.
    pub fn to_pharaoh(&self) -> String {
        let mut out = String::new();
        for links in &self.lines {
            let tokens: Vec<String> = links
                .iter()
                .map(|((i, j), kind)| match kind {
                    LinkKind::Sure => format!("{i}-{j}"),
                    LinkKind::Possible => format!("{i}?{j}"),
                })
                .collect();
            out.push_str(&tokens.join(" "));
            out.push('\n');
        }
        out
    }

    /// Checks every link against the token counts of the matching sentence.
    pub fn validate_against(&self, corpus: &[SentencePair]) -> Result<()> {
        for s in corpus {
            let Some(links) = self.lines.get(s.id) else { continue };
            for (i, j) in links.keys() {
                if *i >= s.src_tokens.len() || *j >= s.tgt_tokens.len() {
                    return Err(Error::Config(format!(
                        "alignment link {i}-{j} on line {} is outside a {}x{} sentence pair",
                        s.id + 1,
                        s.src_tokens.len(),
                        s.tgt_tokens.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn load_pharaoh(path: impl AsRef<Path>) -> Result<GoldAlignment> {
    let path = path.as_ref();
    // Re-join through read_lines to get per-line encoding errors.
    let lines = read_lines(path)?;
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    GoldAlignment::parse(&text, path)
}

/// Predicted links keyed by sentence id.
pub type LinkSet = BTreeMap<usize, BTreeSet<Link>>;

pub fn links_from_pairs(pairs: &[AnchoredPair]) -> LinkSet {
    let mut out = LinkSet::new();
    for p in pairs {
        out.entry(p.sentence_id).or_default().insert((p.src_pos, p.tgt_pos));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
}

/// Share of predicted links that appear among the gold links (sure or possible).
pub fn precision(predicted: &LinkSet, gold: &GoldAlignment) -> Result<PrecisionReport> {
    let mut total = 0;
    let mut correct = 0;
    for (sentence, links) in predicted {
        let gold_links = gold.line(*sentence);
        total += links.len();
        correct += links
            .iter()
            .filter(|l| gold_links.is_some_and(|g| g.contains_key(l)))
            .count();
    }
    if total == 0 {
        return Err(Error::EmptyPrediction);
    }
    Ok(PrecisionReport {
        predicted: total,
        correct,
        precision: correct as f64 / total as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Extracted,
    External,
    RandomInSentence,
    RandomGlobal,
}

impl Population {
    pub const ALL: [Population; 4] = [
        Population::Extracted,
        Population::External,
        Population::RandomInSentence,
        Population::RandomGlobal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Population::Extracted => "extracted",
            Population::External => "external",
            Population::RandomInSentence => "random_in_sentence",
            Population::RandomGlobal => "random_global",
        }
    }

    fn stream(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Population {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Population::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown population {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub layer: usize,
    pub populations: Vec<Population>,
    pub bins: usize,
    /// Cap on the number of similarities drawn per population.
    pub sample_size: usize,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be >= 2, got {}", self.bins)));
        }
        if self.populations.is_empty() {
            return Err(Error::Config("no population requested".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        Ok(())
    }
}

/// A word pair to be embedded, tagged with the population it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedItem {
    pub pair: AnchoredPair,
    pub population: Population,
}

fn subsample<T: Clone>(items: &[T], cap: usize, seed: u64, population: Population) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut rng = run_rng(seed, population.stream());
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

fn item_from(sentence: &SentencePair, src_pos: usize, tgt_pos: usize) -> AnchoredPair {
    let src_word = sentence.src_tokens[src_pos].clone();
    let tgt_word = sentence.tgt_tokens[tgt_pos].clone();
    AnchoredPair {
        pair_id: 0,
        sentence_id: sentence.id,
        src_pos,
        tgt_pos,
        src_type: normalize(&src_word),
        tgt_type: normalize(&tgt_word),
        src_word,
        tgt_word,
    }
}

/// Lists the word pairs whose embeddings the distribution analysis needs,
/// with dense ids. `random_global` needs no items of its own: it recombines
/// the source and target vectors of different items.
pub fn plan_population_items(
    corpus: &[SentencePair],
    pairs: &[AnchoredPair],
    external: Option<&GoldAlignment>,
    spec: &DistributionSpec,
) -> Result<Vec<PlannedItem>> {
    spec.validate()?;
    let wants = |p: Population| spec.populations.contains(&p);
    let by_id: HashMap<usize, &SentencePair> = corpus.iter().map(|s| (s.id, s)).collect();
    let mut items: Vec<PlannedItem> = Vec::new();
    let mut push = |pairs: Vec<AnchoredPair>, population| {
        items.extend(pairs.into_iter().map(|pair| PlannedItem { pair, population }));
    };

    if wants(Population::Extracted) || wants(Population::RandomGlobal) {
        push(
            subsample(pairs, spec.sample_size, spec.seed, Population::Extracted),
            Population::Extracted,
        );
    }

    let mut known: HashMap<usize, BTreeSet<Link>> = HashMap::new();
    for p in pairs {
        known.entry(p.sentence_id).or_default().insert((p.src_pos, p.tgt_pos));
    }
    if let Some(ext) = external {
        ext.validate_against(corpus)?;
        for (sentence, links) in ext.links() {
            known.entry(sentence).or_default().extend(links);
        }
    }

    if wants(Population::External) {
        let ext = external.ok_or_else(|| {
            Error::Config("population external requested without external alignments".into())
        })?;
        let mut all = Vec::new();
        for s in corpus {
            if let Some(links) = ext.line(s.id) {
                all.extend(links.keys().map(|(i, j)| item_from(s, *i, *j)));
            }
        }
        push(
            subsample(&all, spec.sample_size, spec.seed, Population::External),
            Population::External,
        );
    }

    if wants(Population::RandomInSentence) {
        let candidates: Vec<&SentencePair> = corpus
            .iter()
            .filter(|s| {
                let taken = known.get(&s.id).map_or(0, |k| k.len());
                s.src_tokens.len() * s.tgt_tokens.len() > taken
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::Config(
                "population random_in_sentence requested but no sentence has a free position pair".into(),
            ));
        }
        let mut rng = run_rng(spec.seed, Population::RandomInSentence.stream());
        let mut drawn = Vec::with_capacity(spec.sample_size);
        while drawn.len() < spec.sample_size {
            let s = candidates[rng.gen_range(0..candidates.len())];
            let i = rng.gen_range(0..s.src_tokens.len());
            let j = rng.gen_range(0..s.tgt_tokens.len());
            if known.get(&s.id).is_some_and(|k| k.contains(&(i, j))) {
                continue;
            }
            drawn.push(item_from(s, i, j));
        }
        drawn.sort_by_key(|p| (p.sentence_id, p.src_pos, p.tgt_pos));
        push(drawn, Population::RandomInSentence);
    }

    for (id, item) in items.iter_mut().enumerate() {
        debug_assert!(by_id.contains_key(&item.pair.sentence_id));
        item.pair.pair_id = id;
    }
    Ok(items)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Fixed-width bins over [-1, 1]; 1.0 falls in the last bin.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for v in values {
            let pos = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64).floor() as usize;
            counts[pos.min(bins - 1)] += 1;
        }
        Histogram { bins, counts }
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = 2.0 / self.bins as f64;
        (-1.0 + w * bin as f64, -1.0 + w * (bin + 1) as f64)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Sum over bins of the smaller normalized mass.
    pub fn overlap(&self, other: &Histogram) -> f64 {
        let (ta, tb) = (self.total() as f64, other.total() as f64);
        if ta == 0.0 || tb == 0.0 {
            return 0.0;
        }
        self.counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| (*a as f64 / ta).min(*b as f64 / tb))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub population: Population,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub a: Population,
    pub b: Population,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub layer: usize,
    pub bins: usize,
    pub populations: Vec<PopulationStats>,
    pub overlaps: Vec<Overlap>,
}

impl DistributionReport {
    /// `bin_low,bin_high,population,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,population,count\n");
        for p in &self.populations {
            for (bin, count) in p.histogram.counts.iter().enumerate() {
                let (lo, hi) = p.histogram.edges(bin);
                out.push_str(&format!("{lo:.6},{hi:.6},{},{count}\n", p.population.as_str()));
            }
        }
        out
    }

    pub fn overlap(&self, a: Population, b: Population) -> Option<f64> {
        self.overlaps
            .iter()
            .find(|o| (o.a, o.b) == (a, b) || (o.a, o.b) == (b, a))
            .map(|o| o.coefficient)
    }
}

fn row_f64(m: &ndarray::Array2<f32>, row: usize) -> Vec<f64> {
    m.row(row).iter().map(|x| *x as f64).collect()
}

/// Cosine similarities of each requested population at `spec.layer`.
pub fn similarity_distributions(
    src: &dyn LayerSource,
    tgt: &dyn LayerSource,
    items: &[PlannedItem],
    spec: &DistributionSpec,
) -> Result<DistributionReport> {
    spec.validate()?;
    crate::retrieval::check_compatible(src, tgt)?;
    if spec.layer >= src.num_layers() {
        return Err(Error::Config(format!(
            "layer {} requested but the sets have {} layers",
            spec.layer,
            src.num_layers()
        )));
    }
    let src_m = src.layer(spec.layer)?;
    let tgt_m = tgt.layer(spec.layer)?;
    let rows = |item: &PlannedItem| -> Result<(usize, usize)> {
        let id = item.pair.pair_id;
        let s = src.row_index().row_of(id);
        let t = tgt.row_index().row_of(id);
        s.zip(t)
            .ok_or_else(|| Error::Embedding(format!("item {id} is missing from the embedding sets")))
    };

    let mut populations = Vec::new();
    for &population in &spec.populations {
        let sims: Vec<f64> = match population {
            Population::RandomGlobal => {
                let pool: Vec<&PlannedItem> = items
                    .iter()
                    .filter(|i| i.population == Population::Extracted)
                    .collect();
                if pool.len() < 2 {
                    return Err(Error::Config(
                        "population random_global needs at least two extracted items".into(),
                    ));
                }
                let mut rng = run_rng(spec.seed, population.stream());
                (0..spec.sample_size)
                    .map(|_| {
                        let a = rng.gen_range(0..pool.len());
                        let mut b = rng.gen_range(0..pool.len() - 1);
                        if b >= a {
                            b += 1;
                        }
                        let (sa, _) = rows(pool[a])?;
                        let (_, tb) = rows(pool[b])?;
                        Ok(cosine(&row_f64(&src_m, sa), &row_f64(&tgt_m, tb)))
                    })
                    .collect::<Result<_>>()?
            }
            _ => {
                let members: Vec<&PlannedItem> =
                    items.iter().filter(|i| i.population == population).collect();
                if members.is_empty() {
                    return Err(Error::Config(format!(
                        "population {} requested but no items of it were provided",
                        population.as_str()
                    )));
                }
                subsample(&members, spec.sample_size, spec.seed, population)
                    .into_iter()
                    .map(|item| {
                        let (s, t) = rows(item)?;
                        Ok(cosine(&row_f64(&src_m, s), &row_f64(&tgt_m, t)))
                    })
                    .collect::<Result<_>>()?
            }
        };
        populations.push(PopulationStats {
            population,
            count: sims.len(),
            mean: mean(&sims),
            std: std_dev(&sims),
            histogram: Histogram::of(&sims, spec.bins),
        });
    }
    let mut overlaps = Vec::new();
    for (i, a) in populations.iter().enumerate() {
        for b in &populations[i + 1..] {
            overlaps.push(Overlap {
                a: a.population,
                b: b.population,
                coefficient: a.histogram.overlap(&b.histogram),
            });
        }
    }
    Ok(DistributionReport {
        layer: spec.layer,
        bins: spec.bins,
        populations,
        overlaps,
    })
}
