//! Detection of numeric variables in text.
//!
//! Grammar: an optional `+`/`-` sign (only when not glued to a preceding
//! digit, letter or point), a run of ASCII digits, and optionally one decimal
//! point followed by another digit run. Thousands separators, exponents and
//! non-ASCII numerals are not recognised; `3.5%` yields `3.5`.

use serde::{Deserialize, Serialize};

use crate::decimal::Decimal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericKind {
    Integer,
    Float,
}

/// Half-open character-offset interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericVariable {
    pub nv_id: String,
    pub span: Span,
    pub surface: String,
    pub kind: NumericKind,
    pub value: Decimal,
    pub structural: bool,
}

/// Words that mark the following number as a figure/table/chapter index,
/// and characters that do the same when they directly follow the number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuralKeywords {
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
}

impl Default for StructuralKeywords {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect();
        StructuralKeywords {
            prefixes: words(&[
                "Figure", "Table", "Section", "Chapter", "Eq", "图", "表", "第", "章", "节", "式", "例",
            ]),
            suffixes: words(&["章", "节", "题"]),
        }
    }
}

/// Character offset to byte offset.
pub fn byte_offset(text: &str, char_offset: usize) -> usize {
    text.char_indices()
        .nth(char_offset)
        .map(|(b, _)| b)
        .unwrap_or(text.len())
}

pub fn char_slice(text: &str, span: Span) -> &str {
    let start = byte_offset(text, span.start);
    let end = start + byte_offset(&text[start..], span.len());
    &text[start..end]
}

#[derive(Debug, Clone, Default)]
pub struct NumericLexer {
    keywords: StructuralKeywords,
}

impl NumericLexer {
    pub fn new(keywords: StructuralKeywords) -> Self {
        NumericLexer { keywords }
    }

    pub fn keywords(&self) -> &StructuralKeywords {
        &self.keywords
    }

    /// All maximal numeric tokens, in order, with structural flags set.
    pub fn lex(&self, text: &str) -> Vec<NumericVariable> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if !chars[i].is_ascii_digit() {
                i += 1;
                continue;
            }
            let mut start = i;
            if i > 0 && matches!(chars[i - 1], '+' | '-') {
                let glued = i >= 2 && (chars[i - 2].is_ascii_alphanumeric() || chars[i - 2] == '.');
                if !glued {
                    start = i - 1;
                }
            }
            let mut end = i;
            while end < chars.len() && chars[end].is_ascii_digit() {
                end += 1;
            }
            let mut kind = NumericKind::Integer;
            if end + 1 < chars.len() && chars[end] == '.' && chars[end + 1].is_ascii_digit() {
                kind = NumericKind::Float;
                end += 1;
                while end < chars.len() && chars[end].is_ascii_digit() {
                    end += 1;
                }
            }
            let surface: String = chars[start..end].iter().collect();
            let value = surface.parse().expect("lexed token is a plain decimal");
            let span = Span { start, end };
            let structural = self.is_structural_at(&chars, span);
            out.push(NumericVariable {
                nv_id: format!("nv{start}"),
                span,
                surface,
                kind,
                value,
                structural,
            });
            i = end;
        }
        out
    }

    pub fn detect_structural(&self, text: &str, nv: &NumericVariable) -> bool {
        let chars: Vec<char> = text.chars().collect();
        self.is_structural_at(&chars, nv.span)
    }

    fn is_structural_at(&self, chars: &[char], span: Span) -> bool {
        let mut before = &chars[..span.start.min(chars.len())];
        if let Some((&' ', rest)) = before.split_last() {
            before = rest;
        }
        let prefix_hit = self.keywords.prefixes.iter().any(|kw| {
            let kw: Vec<char> = kw.chars().collect();
            if kw.is_empty() {
                return false;
            }
            let ascii_word = kw.iter().all(|c| c.is_ascii_alphabetic());
            let mut b = before;
            if ascii_word {
                // "Eq. 3", "Fig.3"
                if let Some((&'.', rest)) = b.split_last() {
                    b = rest;
                }
            }
            if b.len() < kw.len() {
                return false;
            }
            let tail = &b[b.len() - kw.len()..];
            if !ascii_word {
                return tail == kw.as_slice();
            }
            let same = tail.iter().zip(&kw).all(|(a, b)| a.eq_ignore_ascii_case(b));
            let boundary = b.len() == kw.len() || !b[b.len() - kw.len() - 1].is_ascii_alphabetic();
            same && boundary
        });
        if prefix_hit {
            return true;
        }
        let after = &chars[span.end.min(chars.len())..];
        self.keywords.suffixes.iter().any(|kw| {
            let kw: Vec<char> = kw.chars().collect();
            !kw.is_empty() && after.starts_with(&kw)
        })
    }

    /// Non-structural variables only.
    pub fn legitimate(&self, text: &str) -> Vec<NumericVariable> {
        self.lex(text).into_iter().filter(|nv| !nv.structural).collect()
    }
}

pub fn lex_numerics(text: &str) -> Vec<NumericVariable> {
    NumericLexer::default().lex(text)
}

pub fn detect_structural(text: &str, nv: &NumericVariable) -> bool {
    NumericLexer::default().detect_structural(text, nv)
}

pub fn legitimate_numerics(text: &str) -> Vec<NumericVariable> {
    NumericLexer::default().legitimate(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfaces(nvs: &[NumericVariable]) -> Vec<&str> {
        nvs.iter().map(|n| n.surface.as_str()).collect()
    }

    #[test]
    fn lexes_float_and_integer() {
        let nvs = lex_numerics("增长3.5倍,共12次");
        assert_eq!(surfaces(&nvs), ["3.5", "12"]);
        assert_eq!(nvs[0].kind, NumericKind::Float);
        assert_eq!(nvs[0].value, "3.5".parse().unwrap());
        assert_eq!(nvs[0].span, Span { start: 2, end: 5 });
        assert_eq!(nvs[1].kind, NumericKind::Integer);
        assert_eq!(nvs[1].value, "12".parse().unwrap());
        assert!(nvs.iter().all(|n| !n.structural));
    }

    #[test]
    fn no_numbers() {
        assert!(lex_numerics("没有数字").is_empty());
    }

    #[test]
    fn figure_reference_is_structural() {
        let nvs = lex_numerics("Figure 3 shows");
        assert_eq!(nvs.len(), 1);
        assert!(nvs[0].structural);
    }

    #[test]
    fn structural_keywords() {
        let first = |t: &str| lex_numerics(t).remove(0);
        assert!(first("表 4 列出").structural);
        assert!(!first("利润为4万元").structural);
        assert!(first("第12章").structural);
        assert!(first("见式3").structural);
        assert!(first("see Eq. 2 above").structural);
        assert!(first("as in figure 7").structural);
        assert!(!first("Subtable 3").structural);
        assert!(first("答案见3题").structural);
        assert!(!first("表  4").structural, "only one space is skipped");
        let text = "表 4 列出";
        let nv = first(text);
        assert!(detect_structural(text, &nv));
    }

    #[test]
    fn legitimate_drops_structural() {
        let nvs = legitimate_numerics("Figure 3 shows 2.5% growth");
        assert_eq!(surfaces(&nvs), ["2.5"]);
        assert!(legitimate_numerics("见图1和表2").is_empty());
    }

    #[test]
    fn signs() {
        assert_eq!(surfaces(&lex_numerics("利率为-3%")), ["-3"]);
        assert_eq!(surfaces(&lex_numerics("2019-2020年")), ["2019", "2020"]);
        assert_eq!(surfaces(&lex_numerics("COVID-19")), ["19"]);
        assert_eq!(surfaces(&lex_numerics("变化 +0.25 个点")), ["+0.25"]);
    }

    #[test]
    fn point_rules() {
        let nvs = lex_numerics("3.0 and 7. and 1.2.3");
        assert_eq!(surfaces(&nvs), ["3.0", "7", "1.2", "3"]);
        assert_eq!(nvs[0].kind, NumericKind::Float);
        assert_eq!(nvs[1].kind, NumericKind::Integer);
    }

    #[test]
    fn equal_values_are_distinct_variables() {
        let nvs = lex_numerics("12元和12元");
        assert_eq!(nvs.len(), 2);
        assert_ne!(nvs[0].nv_id, nvs[1].nv_id);
        assert_eq!(nvs[0].value, nvs[1].value);
    }

    #[test]
    fn custom_keywords() {
        let lexer = NumericLexer::new(StructuralKeywords {
            prefixes: vec!["Exhibit".into()],
            suffixes: vec![],
        });
        assert!(lexer.lex("Exhibit 5")[0].structural);
        assert!(!lexer.lex("Figure 5")[0].structural);
    }

    proptest! {
        #[test]
        fn lexer_invariants(text in "[0-9a-zA-Z .+\\-表第章图,%]{0,40}") {
            let nvs = lex_numerics(&text);
            prop_assert_eq!(&nvs, &lex_numerics(&text));
            let n_chars = text.chars().count();
            for (i, nv) in nvs.iter().enumerate() {
                prop_assert!(nv.span.end <= n_chars);
                prop_assert_eq!(char_slice(&text, nv.span), nv.surface.as_str());
                prop_assert_eq!(nv.kind == NumericKind::Float, nv.surface.contains('.'));
                if i > 0 {
                    prop_assert!(nvs[i - 1].span.end <= nv.span.start);
                }
                // maximal: no digit directly before or after the token
                let chars: Vec<char> = text.chars().collect();
                if nv.span.start > 0 {
                    prop_assert!(!chars[nv.span.start - 1].is_ascii_digit());
                }
                if nv.span.end < chars.len() {
                    prop_assert!(!chars[nv.span.end].is_ascii_digit());
                    let extends = chars[nv.span.end] == '.'
                        && nv.kind == NumericKind::Integer
                        && chars.get(nv.span.end + 1).is_some_and(|c| c.is_ascii_digit());
                    prop_assert!(!extends);
                }
            }
            let legit = legitimate_numerics(&text);
            let expected: Vec<_> = nvs.into_iter().filter(|n| !n.structural).collect();
            prop_assert_eq!(legit, expected);
        }
    }
}
