//! Instruction construction: mask one numeric variable with a four-token
//! blank, place the true value at a random identifier slot among the
//! distractors, and render the prompt. Also builds loss-masked token/label
//! sequences for training.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choicegen::{make_choice_set, select_variables, ChoiceSet};
use crate::error::{ForgeError, Result};
use crate::extractor::{Instance, PipelineConfig};
use crate::numeric_lex::{byte_offset, char_slice, NumericVariable};
use crate::rng::derive_rng;
use crate::tokenizer::{Tokenizer, Vocab};

/// Four underscores: four tokens under the default tokenizer.
pub const BLANK: &str = "____";

/// Label value for positions excluded from the loss. Token ids are never negative.
pub const IGNORE_INDEX: i64 = -100;

pub const DEFAULT_TEMPLATE: &str =
    "以下是一道金融领域的单项选择题，请选出填入横线处的正确数值。\n\n{question}\n\n{choices}\n答案：";

/// Prompt layout with `{question}`, `{choices}` (all choice lines) and
/// `{F_1}`..`{F_n}` (single choice lines) placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptTemplate(pub String);

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(DEFAULT_TEMPLATE.to_string())
    }
}

impl PromptTemplate {
    pub fn render(&self, question: &str, lines: &[String]) -> String {
        let template = &self.0;
        let mut out = String::with_capacity(template.len() + question.len() + 64);
        let mut rest = template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let Some(close) = after.find('}') else {
                out.push_str(&rest[open..]);
                return out;
            };
            let name = &after[..close];
            match name {
                "question" => out.push_str(question),
                "choices" => out.push_str(&lines.join("\n")),
                _ => match name.strip_prefix("F_").and_then(|k| k.parse::<usize>().ok()) {
                    Some(k) if (1..=lines.len()).contains(&k) => out.push_str(&lines[k - 1]),
                    _ => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                },
            }
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        out
    }
}

/// "A", "B", ... for up to 26 choices.
pub fn default_identifiers(n: usize) -> Result<Vec<String>> {
    if n > 26 {
        return Err(ForgeError::Config(format!(
            "at most 26 default identifiers (asked for {n})"
        )));
    }
    Ok((0..n).map(|i| char::from(b'A' + i as u8).to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionStyle {
    pub template: PromptTemplate,
    pub identifiers: Vec<String>,
}

impl InstructionStyle {
    pub fn for_choices(n_cho: usize) -> Result<Self> {
        Ok(InstructionStyle {
            template: PromptTemplate::default(),
            identifiers: default_identifiers(n_cho)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub instance_id: String,
    pub nv_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFlags {
    pub zero_widened: bool,
    pub precision_escalated: bool,
}

/// One instruction-output pair plus everything needed to audit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub pair_id: String,
    pub instruction: String,
    pub output: String,
    pub answer_identifier: String,
    pub identifiers: Vec<String>,
    pub choices: Vec<String>,
    pub question: String,
    pub provenance: Provenance,
    pub flags: GenerationFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub instruction: String,
    pub output: String,
}

impl Instruction {
    pub fn pair(&self) -> InstructionPair {
        InstructionPair {
            instruction: self.instruction.clone(),
            output: self.output.clone(),
        }
    }

    pub fn answer_choice(&self) -> Option<&str> {
        let slot = self.identifiers.iter().position(|id| *id == self.answer_identifier)?;
        self.choices.get(slot).map(String::as_str)
    }
}

/// Replaces exactly the variable's span with [`BLANK`].
pub fn mask_variable(inst: &Instance, nv: &NumericVariable) -> Result<String> {
    let n_chars = inst.text.chars().count();
    if nv.span.end > n_chars || char_slice(&inst.text, nv.span) != nv.surface {
        return Err(ForgeError::StaleSpan {
            nv_id: nv.nv_id.clone(),
        });
    }
    let start = byte_offset(&inst.text, nv.span.start);
    let end = start + nv.surface.len();
    Ok(format!("{}{}{}", &inst.text[..start], BLANK, &inst.text[end..]))
}

pub fn build_instruction<R: Rng + ?Sized>(
    inst: &Instance,
    nv: &NumericVariable,
    choice_set: &ChoiceSet,
    style: &InstructionStyle,
    seed: u64,
    rng: &mut R,
) -> Result<Instruction> {
    if choice_set.nv_ref != nv.nv_id {
        return Err(ForgeError::Input(format!(
            "choice set for `{}` used with variable `{}`",
            choice_set.nv_ref, nv.nv_id
        )));
    }
    let n_cho = choice_set.distractors.len() + 1;
    if style.identifiers.len() != n_cho {
        return Err(ForgeError::Config(format!(
            "{} identifiers for {} choices",
            style.identifiers.len(),
            n_cho
        )));
    }
    let question = mask_variable(inst, nv)?;
    let slot = rng.random_range(0..n_cho);
    let mut distractors = choice_set.distractors.iter();
    let choices: Vec<String> = (0..n_cho)
        .map(|k| {
            if k == slot {
                nv.surface.clone()
            } else {
                distractors.next().expect("n_cho - 1 distractors").to_string()
            }
        })
        .collect();
    let lines: Vec<String> = style
        .identifiers
        .iter()
        .zip(&choices)
        .map(|(id, c)| format!("{id}. {c}"))
        .collect();
    let answer = style.identifiers[slot].clone();
    Ok(Instruction {
        pair_id: format!("{}#{}", inst.instance_id, nv.nv_id),
        instruction: style.template.render(&question, &lines),
        output: answer.clone(),
        answer_identifier: answer,
        identifiers: style.identifiers.clone(),
        choices,
        question,
        provenance: Provenance {
            instance_id: inst.instance_id.clone(),
            nv_id: nv.nv_id.clone(),
            seed,
        },
        flags: GenerationFlags {
            zero_widened: choice_set.zero_widened,
            precision_escalated: choice_set.precision_escalated,
        },
    })
}

/// All pairs of one instance, drawn from that instance's own random stream.
pub fn build_for_instance(inst: &Instance, cfg: &PipelineConfig, style: &InstructionStyle) -> Result<Vec<Instruction>> {
    let mut rng = derive_rng(cfg.seed, &format!("instance/{}", inst.instance_id));
    select_variables(inst, cfg, &mut rng)
        .iter()
        .map(|nv| {
            let choice_set = make_choice_set(nv, cfg, &mut rng)?;
            build_instruction(inst, nv, &choice_set, style, cfg.seed, &mut rng)
        })
        .collect()
}

/// One pair per selected variable of every instance, in instance order.
pub fn build_dataset(
    instances: &[Instance],
    cfg: &PipelineConfig,
    style: &InstructionStyle,
) -> Result<Vec<Instruction>> {
    let per_instance: Vec<Vec<Instruction>> = instances
        .par_iter()
        .map(|inst| build_for_instance(inst, cfg, style))
        .collect::<Result<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub tokens: Vec<u32>,
    pub labels: Vec<i64>,
    pub window_k: usize,
    #[serde(skip)]
    pub instruction_len: usize,
}

impl TrainingExample {
    pub fn output_len(&self) -> usize {
        self.tokens.len() - self.instruction_len
    }

    /// Tokens the `i`-th output token (1-based) is conditioned on: the
    /// instruction tail plus earlier outputs while `i <= k`, only the `k`
    /// previous outputs once `i > k`.
    pub fn conditioning_window(&self, i: usize) -> &[u32] {
        assert!(i >= 1 && i <= self.output_len(), "output position {i} out of range");
        let pos = self.instruction_len + i - 1;
        &self.tokens[pos.saturating_sub(self.window_k)..pos]
    }
}

pub fn make_training_example(
    pair: &InstructionPair,
    tokenizer: &dyn Tokenizer,
    vocab: &mut Vocab,
    window_k: usize,
) -> Result<TrainingExample> {
    if window_k == 0 {
        return Err(ForgeError::Config("context window must be >= 1".into()));
    }
    let prompt = vocab.encode(tokenizer, &pair.instruction);
    let output = vocab.encode(tokenizer, &pair.output);
    let labels = std::iter::repeat_n(IGNORE_INDEX, prompt.len())
        .chain(output.iter().map(|&t| t as i64))
        .collect();
    let instruction_len = prompt.len();
    let mut tokens = prompt;
    tokens.extend(output);
    Ok(TrainingExample {
        tokens,
        labels,
        window_k,
        instruction_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::ParagraphSpan;
    use crate::numeric_lex::{legitimate_numerics, lex_numerics};
    use crate::tokenizer::{MixedScriptTokenizer, WhitespaceTokenizer};

    fn instance(text: &str) -> Instance {
        Instance {
            instance_id: "doc:0-2".into(),
            doc_id: "doc".into(),
            paragraph_span: ParagraphSpan(0, 2),
            text: text.into(),
            numerics: legitimate_numerics(text),
        }
    }

    #[test]
    fn masks_by_span() {
        let inst = instance("增长3.5倍");
        assert_eq!(mask_variable(&inst, &inst.numerics[0]).unwrap(), "增长____倍");
        let twice = instance("收入12元，成本12元。");
        let masked = mask_variable(&twice, &twice.numerics[1]).unwrap();
        assert_eq!(masked, "收入12元，成本____元。");
        let question_vars = legitimate_numerics(&masked);
        assert_eq!(question_vars.len(), 1);
        assert_eq!(question_vars[0].span, twice.numerics[0].span);
    }

    #[test]
    fn stale_span_rejected() {
        let inst = instance("增长3.5倍");
        let mut nv = inst.numerics[0].clone();
        nv.span.start += 1;
        assert!(matches!(mask_variable(&inst, &nv), Err(ForgeError::StaleSpan { .. })));
        nv.span = crate::numeric_lex::Span { start: 10, end: 13 };
        assert!(matches!(mask_variable(&inst, &nv), Err(ForgeError::StaleSpan { .. })));
    }

    #[test]
    fn blank_is_four_tokens() {
        assert_eq!(MixedScriptTokenizer.count(BLANK), 4);
    }

    #[test]
    fn template_placeholders() {
        let t = PromptTemplate("Q: {question}\n{F_2}|{F_1}\n{choices}\n{unknown} {F_9}".into());
        let lines = vec!["A. 1".to_string(), "B. 2".to_string()];
        assert_eq!(
            t.render("x {choices} y", &lines),
            "Q: x {choices} y\nB. 2|A. 1\nA. 1\nB. 2\n{unknown} {F_9}"
        );
    }

    #[test]
    fn instruction_layout() {
        let inst = instance("利率为3.5%。");
        let nv = &inst.numerics[0];
        let cs = ChoiceSet {
            nv_ref: nv.nv_id.clone(),
            correct_value: nv.value.clone(),
            distractors: vec!["3.1".parse().unwrap(), "3.9".parse().unwrap(), "3.2".parse().unwrap()],
            kind: nv.kind,
            zero_widened: false,
            precision_escalated: false,
        };
        let style = InstructionStyle::for_choices(4).unwrap();
        let mut rng = derive_rng(1, "layout");
        let ins = build_instruction(&inst, nv, &cs, &style, 1, &mut rng).unwrap();
        assert!(["A", "B", "C", "D"].contains(&ins.answer_identifier.as_str()));
        assert_eq!(ins.output, ins.answer_identifier);
        assert_eq!(ins.answer_choice(), Some("3.5"));
        let others: Vec<&String> = ins.choices.iter().filter(|c| *c != "3.5").collect();
        assert_eq!(others, ["3.1", "3.9", "3.2"]);
        assert_eq!(ins.question, "利率为____%。");
        for (id, c) in ins.identifiers.iter().zip(&ins.choices) {
            assert!(ins.instruction.contains(&format!("\n{id}. {c}")));
        }
        assert!(ins.instruction.starts_with("以下是"));
        assert!(ins.instruction.ends_with("答案："));
        assert_eq!(ins.pair_id, format!("doc:0-2#{}", nv.nv_id));

        let wrong = ChoiceSet {
            nv_ref: "nv99".into(),
            ..cs
        };
        assert!(build_instruction(&inst, nv, &wrong, &style, 1, &mut rng).is_err());
    }

    #[test]
    fn dataset_cardinality() {
        let cfg = PipelineConfig::default();
        let style = InstructionStyle::for_choices(cfg.n_cho).unwrap();
        let texts = ["1 a 2 a 3 a 4 a 5 a 6 a 7 a 8 a 9 a 10。", "1 a 2 a 3 a 4。", "7。"];
        let instances: Vec<Instance> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Instance {
                instance_id: format!("d:{i}-{i}"),
                ..instance(t)
            })
            .collect();
        assert_eq!(build_dataset(&instances, &cfg, &style).unwrap().len(), 6);
        assert!(build_dataset(&[], &cfg, &style).unwrap().is_empty());
    }

    #[test]
    fn dataset_is_deterministic_and_round_trips() {
        let cfg = PipelineConfig {
            r_nv: 1.0,
            ..Default::default()
        };
        let style = InstructionStyle::for_choices(cfg.n_cho).unwrap();
        let inst = instance("2019年营收12.50亿元，同比增长12%，净利润0亿元，见表3。");
        let a = build_dataset(std::slice::from_ref(&inst), &cfg, &style).unwrap();
        let b = build_dataset(std::slice::from_ref(&inst), &cfg, &style).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for ins in &a {
            let restored = ins.question.replacen(BLANK, ins.answer_choice().unwrap(), 1);
            assert_eq!(restored, inst.text);
            assert_eq!(
                ins.choices
                    .iter()
                    .filter(|c| **c == ins.answer_choice().unwrap())
                    .count(),
                1
            );
        }
        assert!(a.iter().any(|i| i.flags.zero_widened));
    }

    #[test]
    fn label_mask_small_example() {
        let pair = InstructionPair {
            instruction: "x y z".into(),
            output: "A".into(),
        };
        let ex = make_training_example(&pair, &WhitespaceTokenizer, &mut Vocab::new(), 4).unwrap();
        assert_eq!(ex.labels, [IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX, 3]);
        assert_eq!(ex.tokens, [0, 1, 2, 3]);
        assert!(make_training_example(&pair, &WhitespaceTokenizer, &mut Vocab::new(), 0).is_err());
    }

    #[test]
    fn conditioning_windows() {
        let pair = InstructionPair {
            instruction: "w1 w2 w3 w4".into(),
            output: "o1 o2 o3".into(),
        };
        let mut vocab = Vocab::new();
        let ex = make_training_example(&pair, &WhitespaceTokenizer, &mut vocab, 2).unwrap();
        let pieces = |ids: &[u32]| ids.iter().map(|&i| vocab.piece(i).unwrap()).collect::<Vec<_>>();
        // i <= k: instruction tail, then earlier outputs
        assert_eq!(pieces(ex.conditioning_window(1)), ["w3", "w4"]);
        assert_eq!(pieces(ex.conditioning_window(2)), ["w4", "o1"]);
        // i > k: outputs only
        assert_eq!(pieces(ex.conditioning_window(3)), ["o1", "o2"]);

        let mut same_vocab = vocab.clone();
        let wide = make_training_example(&pair, &WhitespaceTokenizer, &mut same_vocab, 100).unwrap();
        assert_eq!(
            pieces(wide.conditioning_window(3)),
            ["w1", "w2", "w3", "w4", "o1", "o2"]
        );
    }

    #[test]
    fn lexing_question_drops_masked_variable() {
        let inst = instance("价格为4.25元");
        let q = mask_variable(&inst, &inst.numerics[0]).unwrap();
        assert!(lex_numerics(&q).is_empty());
    }
}
