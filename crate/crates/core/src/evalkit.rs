//! Multiple-choice benchmark handling: numeric/non-numeric split, few-shot
//! prompts, answer picking from per-choice scores, and accuracy reports laid
//! out as n / non-n / avg per sub-domain plus an overall group.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::instructions::default_identifiers;
use crate::jsonl::read_jsonl;
use crate::numeric_lex::lex_numerics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subdomain {
    #[serde(alias = "accounting")]
    Accounting,
    #[serde(alias = "certificate")]
    Certificate,
    #[serde(alias = "economy")]
    Economy,
    #[serde(alias = "finance")]
    Finance,
}

impl Subdomain {
    pub const ALL: [Subdomain; 4] = [
        Subdomain::Accounting,
        Subdomain::Certificate,
        Subdomain::Economy,
        Subdomain::Finance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subdomain::Accounting => "Accounting",
            Subdomain::Certificate => "Certificate",
            Subdomain::Economy => "Economy",
            Subdomain::Finance => "Finance",
        }
    }

    pub fn parse(s: &str) -> Option<Subdomain> {
        Subdomain::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub qid: String,
    pub subject: String,
    pub subdomain: Subdomain,
    pub stem: String,
    pub options: Vec<String>,
    pub gold: String,
}

impl EvalQuestion {
    pub fn identifiers(&self) -> Vec<String> {
        default_identifiers(self.options.len()).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 || self.options.len() > 26 {
            return Err(ForgeError::Input(format!("{}: needs 2..=26 options", self.qid)));
        }
        if !self.identifiers().contains(&self.gold) {
            return Err(ForgeError::Input(format!(
                "{}: gold `{}` is not an identifier",
                self.qid, self.gold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionClass {
    Numeric,
    NonNumeric,
}

/// Numeric iff any option contains a number. The stem is not consulted and
/// structural flags are ignored.
pub fn classify_question(q: &EvalQuestion) -> QuestionClass {
    if q.options.iter().any(|o| !lex_numerics(o).is_empty()) {
        QuestionClass::Numeric
    } else {
        QuestionClass::NonNumeric
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    #[serde(flatten)]
    pub question: EvalQuestion,
    pub class: QuestionClass,
}

pub fn split_questions(questions: &[EvalQuestion]) -> Vec<SplitRecord> {
    questions
        .iter()
        .map(|q| SplitRecord {
            question: q.clone(),
            class: classify_question(q),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotTemplate {
    pub header: String,
    pub block: String,
}

impl Default for FewShotTemplate {
    fn default() -> Self {
        FewShotTemplate {
            header: "以下是中国关于{subject}考试的单项选择题，请选出其中的正确答案。".into(),
            block: "{stem}\n{choices}\n答案：".into(),
        }
    }
}

impl FewShotTemplate {
    fn render_block(&self, q: &EvalQuestion) -> String {
        let choices = q
            .identifiers()
            .iter()
            .zip(&q.options)
            .map(|(id, o)| format!("{id}. {o}"))
            .collect::<Vec<_>>()
            .join("\n");
        self.block.replace("{stem}", &q.stem).replace("{choices}", &choices)
    }
}

/// Header, then the first `k_shots` exemplars each followed by its gold
/// identifier, then the unanswered target.
pub fn assemble_few_shot(
    q: &EvalQuestion,
    exemplars: &[EvalQuestion],
    k_shots: usize,
    template: &FewShotTemplate,
) -> Result<String> {
    if exemplars.len() < k_shots {
        return Err(ForgeError::InsufficientExemplars {
            needed: k_shots,
            available: exemplars.len(),
        });
    }
    let mut out = template.header.replace("{subject}", &q.subject);
    out.push_str("\n\n");
    for ex in &exemplars[..k_shots] {
        out.push_str(&template.render_block(ex));
        out.push_str(&ex.gold);
        out.push_str("\n\n");
    }
    out.push_str(&template.render_block(q));
    Ok(out)
}

/// Identifier with the largest score; ties go to the lowest index. NaN never wins.
pub fn pick_answer(scores: &[f64], identifiers: &[String]) -> Result<String> {
    if scores.is_empty() || identifiers.is_empty() {
        return Err(ForgeError::EmptyScores);
    }
    if scores.len() != identifiers.len() {
        return Err(ForgeError::Input(format!(
            "{} scores for {} identifiers",
            scores.len(),
            identifiers.len()
        )));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    Ok(identifiers[best].clone())
}

/// Accuracies are percentages; `None` when the class is empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub n_acc: Option<f64>,
    pub non_n_acc: Option<f64>,
    pub avg_acc: Option<f64>,
    pub n_count: usize,
    pub non_n_count: usize,
    pub n_correct: usize,
    pub non_n_correct: usize,
}

fn percent(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

impl GroupScore {
    fn record(&mut self, class: QuestionClass, correct: bool) {
        match class {
            QuestionClass::Numeric => {
                self.n_count += 1;
                self.n_correct += correct as usize;
            }
            QuestionClass::NonNumeric => {
                self.non_n_count += 1;
                self.non_n_correct += correct as usize;
            }
        }
    }

    fn finish(&mut self) {
        self.n_acc = percent(self.n_correct, self.n_count);
        self.non_n_acc = percent(self.non_n_correct, self.non_n_count);
        self.avg_acc = percent(self.n_correct + self.non_n_correct, self.n_count + self.non_n_count);
    }

    pub fn total(&self) -> usize {
        self.n_count + self.non_n_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_subdomain: BTreeMap<Subdomain, GroupScore>,
    pub overall: GroupScore,
}

pub fn score(questions: &[EvalQuestion], predictions: &HashMap<String, String>) -> Result<ScoreReport> {
    let mut per_subdomain: BTreeMap<Subdomain, GroupScore> =
        Subdomain::ALL.into_iter().map(|d| (d, GroupScore::default())).collect();
    let mut overall = GroupScore::default();
    for q in questions {
        let predicted = predictions
            .get(&q.qid)
            .ok_or_else(|| ForgeError::MissingPrediction(q.qid.clone()))?;
        let class = classify_question(q);
        let correct = *predicted == q.gold;
        per_subdomain
            .get_mut(&q.subdomain)
            .expect("all sub-domains")
            .record(class, correct);
        overall.record(class, correct);
    }
    per_subdomain.values_mut().for_each(GroupScore::finish);
    overall.finish();
    Ok(ScoreReport { per_subdomain, overall })
}

impl ScoreReport {
    /// Plain-text table: one n / non-n / avg column group per sub-domain, then Overall.
    pub fn render_table(&self) -> String {
        let groups: Vec<(&str, &GroupScore)> = self
            .per_subdomain
            .iter()
            .map(|(d, g)| (d.name(), g))
            .chain(std::iter::once(("Overall", &self.overall)))
            .collect();
        let acc = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for (name, _) in &groups {
            let _ = write!(out, " | {name:^22}");
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", "");
        for _ in &groups {
            let _ = write!(out, " | {:>6} {:>7} {:>7}", "n", "non-n", "avg");
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", "accuracy");
        for (_, g) in &groups {
            let _ = write!(
                out,
                " | {:>6} {:>7} {:>7}",
                acc(g.n_acc),
                acc(g.non_n_acc),
                acc(g.avg_acc)
            );
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", "questions");
        for (_, g) in &groups {
            let _ = write!(out, " | {:>6} {:>7} {:>7}", g.n_count, g.non_n_count, g.total());
        }
        out.push('\n');
        out
    }
}

/// Reads questions from JSON Lines, or from CSV with header
/// `qid,subject,subdomain,stem,A,B,...,gold` (option columns are the
/// single-letter headers in order).
pub fn read_questions(path: &Path) -> Result<Vec<EvalQuestion>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let questions = if is_csv {
        read_questions_csv(path)?
    } else {
        read_jsonl(path)?
    };
    for q in &questions {
        q.validate()?;
    }
    Ok(questions)
}

fn read_questions_csv(path: &Path) -> Result<Vec<EvalQuestion>> {
    let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| ForgeError::Input(format!("{}: {e}", path.display()));
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ForgeError::Input(format!("{}: missing column `{name}`", path.display())))
    };
    let (qid, subject, subdomain, stem, gold) = (
        col("qid")?,
        col("subject")?,
        col("subdomain")?,
        col("stem")?,
        col("gold")?,
    );
    let option_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() == 1 && h.as_bytes()[0].is_ascii_uppercase())
        .map(|(i, _)| i)
        .collect();
    if option_cols.len() < 2 {
        return Err(ForgeError::Input(format!(
            "{}: need option columns A, B, ...",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (row_no, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let subdomain = Subdomain::parse(&field(subdomain)).ok_or_else(|| {
            ForgeError::Input(format!(
                "{} row {}: unknown subdomain `{}`",
                path.display(),
                row_no + 2,
                field(subdomain)
            ))
        })?;
        out.push(EvalQuestion {
            qid: field(qid),
            subject: field(subject),
            subdomain,
            stem: field(stem),
            options: option_cols.iter().map(|&i| field(i)).collect(),
            gold: field(gold).trim().to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PredictionLine {
    Identifier { qid: String, identifier: String },
    Scores { qid: String, scores: Vec<f64> },
}

/// Reads `{qid, identifier}` or `{qid, scores[]}` lines; scores are resolved
/// with [`pick_answer`] against the question's identifiers.
pub fn read_predictions(path: &Path, questions: &[EvalQuestion]) -> Result<HashMap<String, String>> {
    let by_qid: HashMap<&str, &EvalQuestion> = questions.iter().map(|q| (q.qid.as_str(), q)).collect();
    let mut out = HashMap::new();
    for line in read_jsonl::<PredictionLine>(path)? {
        let (qid, answer) = match line {
            PredictionLine::Identifier { qid, identifier } => (qid, identifier),
            PredictionLine::Scores { qid, scores } => {
                let q = by_qid
                    .get(qid.as_str())
                    .ok_or_else(|| ForgeError::Input(format!("scores for unknown question `{qid}`")))?;
                let answer = pick_answer(&scores, &q.identifiers())?;
                (qid, answer)
            }
        };
        out.insert(qid, answer);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn question(qid: &str, subdomain: Subdomain, options: &[&str], gold: &str) -> EvalQuestion {
        EvalQuestion {
            qid: qid.into(),
            subject: "会计学".into(),
            subdomain,
            stem: "下列说法正确的是____".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            gold: gold.into(),
        }
    }

    fn ids(n: usize) -> Vec<String> {
        default_identifiers(n).unwrap()
    }

    #[test]
    fn classification() {
        let numeric = question("q1", Subdomain::Finance, &["3.5%", "4.0%", "4.5%", "5.0%"], "A");
        assert_eq!(classify_question(&numeric), QuestionClass::Numeric);
        let words = question("q2", Subdomain::Finance, &["流动性", "安全性", "收益性", "效益性"], "A");
        assert_eq!(classify_question(&words), QuestionClass::NonNumeric);
        let chapter = question("q3", Subdomain::Finance, &["第3章", "甲", "乙", "丙"], "A");
        assert_eq!(classify_question(&chapter), QuestionClass::Numeric);
        let mut mutated = words.clone();
        mutated.stem = "2019年利率为3.5%，下列说法正确的是".into();
        assert_eq!(classify_question(&mutated), QuestionClass::NonNumeric);
    }

    #[test]
    fn pick_answer_rules() {
        assert_eq!(pick_answer(&[0.1, 2.3, -1.0, 0.0], &ids(4)).unwrap(), "B");
        assert_eq!(pick_answer(&[1.0; 4], &ids(4)).unwrap(), "A");
        assert_eq!(pick_answer(&[f64::NAN, 0.5, 0.5, -1.0], &ids(4)).unwrap(), "B");
        assert!(matches!(pick_answer(&[], &[]), Err(ForgeError::EmptyScores)));
        assert!(pick_answer(&[1.0], &ids(2)).is_err());
    }

    #[test]
    fn pick_answer_follows_permutation() {
        let options = ["甲", "乙", "丙", "丁"];
        let scores = [0.3, -2.0, 1.7, 0.9];
        let pick = |perm: &[usize]| {
            let s: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let id = pick_answer(&s, &ids(4)).unwrap();
            let slot = ids(4).iter().position(|x| *x == id).unwrap();
            options[perm[slot]]
        };
        assert_eq!(pick(&[0, 1, 2, 3]), "丙");
        assert_eq!(pick(&[3, 2, 1, 0]), "丙");
        assert_eq!(pick(&[1, 3, 0, 2]), "丙");
    }

    #[test]
    fn few_shot_blocks() {
        let target = question("t", Subdomain::Accounting, &["1", "2", "3", "4"], "C");
        let exemplars: Vec<_> = (0..6)
            .map(|i| question(&format!("e{i}"), Subdomain::Accounting, &["甲", "乙", "丙", "丁"], "B"))
            .collect();
        let t = FewShotTemplate::default();
        let zero = assemble_few_shot(&target, &exemplars, 0, &t).unwrap();
        assert_eq!(zero.matches("答案：").count(), 1);
        assert!(zero.ends_with("A. 1\nB. 2\nC. 3\nD. 4\n答案："));
        let five = assemble_few_shot(&target, &exemplars, 5, &t).unwrap();
        assert_eq!(five.matches("答案：B").count(), 5);
        assert_eq!(five.matches("答案：").count(), 6);
        assert!(five.starts_with("以下是中国关于会计学考试的单项选择题"));
        let err = assemble_few_shot(&target, &exemplars, 7, &t).unwrap_err();
        assert!(matches!(
            err,
            ForgeError::InsufficientExemplars {
                needed: 7,
                available: 6
            }
        ));
    }

    #[test]
    fn score_arithmetic() {
        let qs = vec![
            question("n1", Subdomain::Economy, &["1", "2"], "A"),
            question("n2", Subdomain::Economy, &["1", "2"], "A"),
            question("w1", Subdomain::Economy, &["甲", "乙"], "B"),
            question("w2", Subdomain::Economy, &["甲", "乙"], "A"),
        ];
        let preds: HashMap<String, String> = [("n1", "A"), ("n2", "B"), ("w1", "B"), ("w2", "A")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let r = score(&qs, &preds).unwrap();
        let g = r.per_subdomain[&Subdomain::Economy];
        assert_eq!((g.n_acc, g.non_n_acc, g.avg_acc), (Some(50.0), Some(100.0), Some(75.0)));
        assert_eq!(r.overall, g);
        assert_eq!(r.per_subdomain[&Subdomain::Finance].avg_acc, None);

        let all_gold: HashMap<String, String> = qs.iter().map(|q| (q.qid.clone(), q.gold.clone())).collect();
        assert_eq!(score(&qs, &all_gold).unwrap().overall.avg_acc, Some(100.0));

        let mut missing = preds.clone();
        missing.remove("w2");
        assert!(matches!(score(&qs, &missing), Err(ForgeError::MissingPrediction(q)) if q == "w2"));

        let mut reversed = qs.clone();
        reversed.reverse();
        assert_eq!(score(&reversed, &preds).unwrap(), r);
    }

    #[test]
    fn avg_is_pooled() {
        // 1/1 numeric, 1/3 non-numeric: pooled 2/4 = 50%, class mean would be 66.7%
        let qs = vec![
            question("n", Subdomain::Finance, &["1", "2"], "A"),
            question("a", Subdomain::Finance, &["甲", "乙"], "A"),
            question("b", Subdomain::Finance, &["甲", "乙"], "A"),
            question("c", Subdomain::Finance, &["甲", "乙"], "A"),
        ];
        let preds: HashMap<String, String> = [("n", "A"), ("a", "A"), ("b", "B"), ("c", "B")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(score(&qs, &preds).unwrap().overall.avg_acc, Some(50.0));
    }

    #[test]
    fn table_layout() {
        let qs = vec![question("n1", Subdomain::Economy, &["1", "2"], "A")];
        let preds = HashMap::from([("n1".to_string(), "A".to_string())]);
        let table = score(&qs, &preds).unwrap().render_table();
        let header = table.lines().next().unwrap();
        let order: Vec<usize> = ["Accounting", "Certificate", "Economy", "Finance", "Overall"]
            .iter()
            .map(|n| header.find(n).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(table.lines().nth(1).unwrap().matches("non-n").count(), 5);
        assert!(table.contains("100.00"));
    }

    #[test]
    fn csv_and_jsonl_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("qs.csv");
        fs::write(
            &csv_path,
            "qid,subject,subdomain,stem,A,B,C,D,gold\nq1,会计,accounting,题干,1,2,3,4,C\n",
        )
        .unwrap();
        let qs = read_questions(&csv_path).unwrap();
        assert_eq!(qs[0].options, ["1", "2", "3", "4"]);
        assert_eq!(qs[0].subdomain, Subdomain::Accounting);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "qid,subject,stem,A,B,gold\nq1,x,y,1,2,A\n").unwrap();
        assert!(read_questions(&bad).unwrap_err().to_string().contains("subdomain"));

        let preds = dir.path().join("p.jsonl");
        fs::write(&preds, "{\"qid\":\"q1\",\"scores\":[0.1,0.2,0.9,0.0]}\n").unwrap();
        assert_eq!(read_predictions(&preds, &qs).unwrap()["q1"], "C");
        fs::write(&preds, "{\"qid\":\"q1\",\"identifier\":\"D\"}\n").unwrap();
        assert_eq!(read_predictions(&preds, &qs).unwrap()["q1"], "D");

        let jsonl = dir.path().join("qs.jsonl");
        fs::write(&jsonl, serde_json::to_string(&qs[0]).unwrap() + "\n").unwrap();
        assert_eq!(read_questions(&jsonl).unwrap(), qs);
        let split = split_questions(&qs);
        let line = serde_json::to_value(&split[0]).unwrap();
        assert_eq!(line["class"], "numeric");
        assert_eq!(line["qid"], "q1");
    }
}
