//! Numeric-sensitive instance extraction and random instance selection.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CleanDocument;
use crate::decimal::Decimal;
use crate::error::{ForgeError, Result};
use crate::numeric_lex::{NumericLexer, NumericVariable};
use crate::rng::{derive_rng, sample_indices};

/// Characters that count as the end of a sentence.
pub const SENTENCE_TERMINALS: &[char] = &['。', '！', '？', '；', '.', '!', '?', ';', ':', '"', '」', '』', '”'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub r_ins: f64,
    pub r_nv: f64,
    pub n_cho: usize,
    pub s: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_min: 3,
            n_max: 8,
            r_ins: 0.05,
            r_nv: 0.3,
            n_cho: 4,
            s: 1000.0,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ForgeError::Config(msg));
        if self.n_min < 1 {
            return fail(format!("n_min must be >= 1 (got {})", self.n_min));
        }
        if self.n_max < self.n_min {
            return fail(format!(
                "n_max must be >= n_min (got n_min={}, n_max={})",
                self.n_min, self.n_max
            ));
        }
        if !(self.r_ins > 0.0 && self.r_ins <= 1.0) {
            return fail(format!("r_ins must be in (0, 1] (got {})", self.r_ins));
        }
        if !(self.r_nv > 0.0 && self.r_nv <= 1.0) {
            return fail(format!("r_nv must be in (0, 1] (got {})", self.r_nv));
        }
        if self.n_cho < 2 {
            return fail(format!("n_cho must be >= 2 (got {})", self.n_cho));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return fail(format!("s must be a positive number (got {})", self.s));
        }
        Ok(())
    }
}

/// `ceil(ratio * n)`, computed on the decimal rendering of `ratio` so that
/// `0.3 * 10` is 3 and not 4.
pub fn ceil_ratio(ratio: f64, n: usize) -> usize {
    let r = Decimal::from_f64(ratio).expect("finite ratio");
    r.ceil_mul(n).to_usize().expect("ratio in (0, 1]")
}

/// Inclusive paragraph index range `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphSpan(pub usize, pub usize);

impl ParagraphSpan {
    pub fn len(&self) -> usize {
        self.1 - self.0 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub doc_id: String,
    pub paragraph_span: ParagraphSpan,
    pub text: String,
    pub numerics: Vec<NumericVariable>,
}

fn ends_sentence(paragraph: &str) -> bool {
    paragraph
        .trim_end()
        .chars()
        .next_back()
        .is_some_and(|c| SENTENCE_TERMINALS.contains(&c))
}

/// Single forward pass over one document. Each candidate starts with `n_min`
/// paragraphs and grows until its last paragraph ends a sentence or it holds
/// `n_max` paragraphs. Candidates without legitimate numerics are dropped but
/// still consume their paragraphs.
pub fn extract_instances(doc: &CleanDocument, cfg: &PipelineConfig, lexer: &NumericLexer) -> Vec<Instance> {
    let paras = &doc.paragraphs;
    let mut out = Vec::new();
    let mut start = 0;
    while start + cfg.n_min <= paras.len() {
        let mut last = start + cfg.n_min - 1;
        while !ends_sentence(&paras[last].text) && last - start + 1 < cfg.n_max && last + 1 < paras.len() {
            last += 1;
        }
        let text = paras[start..=last]
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let numerics = lexer.legitimate(&text);
        if !numerics.is_empty() {
            out.push(Instance {
                instance_id: format!("{}:{}-{}", doc.doc_id, start, last),
                doc_id: doc.doc_id.clone(),
                paragraph_span: ParagraphSpan(start, last),
                text,
                numerics,
            });
        }
        start = last + 1;
    }
    out
}

/// Keeps a uniformly random `ceil(r_ins * |all|)` of the instances, in their
/// original order.
pub fn select_instances<R: Rng + ?Sized>(all: &[Instance], cfg: &PipelineConfig, rng: &mut R) -> Vec<Instance> {
    if all.is_empty() {
        return Vec::new();
    }
    let k = ceil_ratio(cfg.r_ins, all.len());
    sample_indices(all.len(), k, rng)
        .into_iter()
        .map(|i| all[i].clone())
        .collect()
}

/// Label of the random stream that drives instance selection.
pub const SELECT_STREAM: &str = "select";

/// Extracts candidates from every document (in parallel, kept in document
/// order) and selects among all of them with the seeded selection stream.
/// Returns the candidate count alongside the selection.
pub fn extract_corpus(docs: &[CleanDocument], cfg: &PipelineConfig, lexer: &NumericLexer) -> (usize, Vec<Instance>) {
    let all: Vec<Instance> = docs
        .par_iter()
        .map(|doc| extract_instances(doc, cfg, lexer))
        .collect::<Vec<_>>()
        .concat();
    let mut rng = derive_rng(cfg.seed, SELECT_STREAM);
    (all.len(), select_instances(&all, cfg, &mut rng))
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Probability that a uniform draw of `n_selected` instances out of `n_ins`
/// avoids all `n_irr` irrelevant ones: `C(n_ins - n_irr, n_selected) / C(n_ins, n_selected)`.
pub fn relevance_probability(n_ins: u64, n_irr: u64, n_selected: u64) -> Result<BigRational> {
    if n_irr > n_ins || n_selected > n_ins {
        return Err(ForgeError::InvalidCounts(format!(
            "need n_irr <= n_ins and n_selected <= n_ins (n_ins={n_ins}, n_irr={n_irr}, n_selected={n_selected})"
        )));
    }
    let num = binomial(n_ins - n_irr, n_selected);
    let den = binomial(n_ins, n_selected);
    Ok(BigRational::new(num.into(), den.into()))
}
