use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Sequence, SequenceModel, Token};
use crate::error::{domain, Error, Result};
use crate::stable_math::LogValue;

pub(super) const HEADER: &str = "markov-v1";

/// Context padding before the first character of a line.
const START: u32 = u32::MAX;

/// Character-level order-`m` Markov model with additive smoothing.
///
/// Token 0 is end-of-sequence; token `i + 1` is the `i`-th distinct corpus
/// character in code-point order. Each corpus line is one training
/// sequence; a line terminated by a newline contributes a transition into
/// end-of-sequence, a final unterminated line does not.
///
/// `P(t | ctx) = (count(ctx, t) + alpha) / (total(ctx) + alpha * V)`. With
/// `alpha = 0` an unseen context falls back to the overall next-token
/// frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovTextModel {
    order: usize,
    alpha: f64,
    max_len: usize,
    chars: Vec<char>,
    counts: BTreeMap<Vec<u32>, Vec<u64>>,
    unigram: Vec<u64>,
}

/// Counts transitions in `corpus`.
pub fn train_markov(corpus: &str, order: usize, alpha: f64, max_len: usize) -> Result<MarkovTextModel> {
    if order == 0 {
        return domain("Markov order must be at least 1");
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return domain(format!("smoothing alpha must be finite and >= 0, got {alpha}"));
    }
    if max_len == 0 {
        return domain("max_len must be at least 1");
    }
    let mut chars: Vec<char> = corpus.chars().filter(|&c| c != '\n' && c != '\r').collect();
    chars.sort_unstable();
    chars.dedup();
    if chars.is_empty() {
        return domain("empty corpus");
    }
    let vocab = chars.len() + 1;
    let id_of = |c: char| chars.binary_search(&c).expect("char in vocabulary") as u32 + 1;

    let mut counts: BTreeMap<Vec<u32>, Vec<u64>> = BTreeMap::new();
    let segments: Vec<&str> = corpus.split('\n').collect();
    let last = segments.len() - 1;
    for (i, seg) in segments.iter().enumerate() {
        let seg = seg.strip_suffix('\r').unwrap_or(seg);
        let terminated = i < last;
        if seg.is_empty() {
            continue;
        }
        let mut ctx = vec![START; order];
        let ids = seg.chars().map(id_of).chain(terminated.then_some(0));
        for next in ids {
            counts.entry(ctx.clone()).or_insert_with(|| vec![0; vocab])[next as usize] += 1;
            ctx.remove(0);
            ctx.push(next);
        }
    }
    Ok(MarkovTextModel::assemble(order, alpha, max_len, chars, counts))
}

impl MarkovTextModel {
    fn assemble(order: usize, alpha: f64, max_len: usize, chars: Vec<char>, counts: BTreeMap<Vec<u32>, Vec<u64>>) -> Self {
        let mut unigram = vec![0u64; chars.len() + 1];
        for row in counts.values() {
            for (u, c) in unigram.iter_mut().zip(row) {
                *u += c;
            }
        }
        Self {
            order,
            alpha,
            max_len,
            chars,
            counts,
            unigram,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len.max(1);
        self
    }

    fn context(&self, prefix: &[Token]) -> Vec<u32> {
        let mut ctx = vec![START; self.order.saturating_sub(prefix.len())];
        let tail = &prefix[prefix.len().saturating_sub(self.order)..];
        ctx.extend(tail.iter().map(|t| t.0));
        ctx
    }

    /// Conditional probability of `next` after `prefix`, in linear space.
    pub fn prob(&self, prefix: &[Token], next: Token) -> f64 {
        self.step(prefix)[next.index()].exp()
    }

    /// Serializes the count table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "alpha {:?}", self.alpha);
        let _ = writeln!(out, "max_len {}", self.max_len);
        let cps: Vec<String> = self.chars.iter().map(|&c| (c as u32).to_string()).collect();
        let _ = writeln!(out, "chars {}", cps.join(" "));
        for (ctx, row) in &self.counts {
            let ctx: Vec<String> = ctx
                .iter()
                .map(|&t| if t == START { "^".to_string() } else { t.to_string() })
                .collect();
            for (next, &n) in row.iter().enumerate() {
                if n > 0 {
                    let _ = writeln!(out, "count {} {next} {n}", ctx.join(","));
                }
            }
        }
        out
    }

    /// Parses the output of [`to_text`](Self::to_text).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut order = None;
        let mut alpha = None;
        let mut max_len = None;
        let mut chars: Option<Vec<char>> = None;
        let mut rows: Vec<(usize, Vec<u32>, usize, u64)> = Vec::new();
        let mut seen_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            let err = |msg: String| Error::Format { line: lineno, msg };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line != HEADER {
                    return Err(err(format!("expected header {HEADER:?}")));
                }
                seen_header = true;
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            let one = |rest: &[&str]| -> Result<String> {
                match rest {
                    [v] => Ok(v.to_string()),
                    _ => Err(err(format!("{key} takes one value"))),
                }
            };
            match key {
                "order" => order = Some(one(&rest)?.parse::<usize>().map_err(|e| err(e.to_string()))?),
                "alpha" => alpha = Some(one(&rest)?.parse::<f64>().map_err(|e| err(e.to_string()))?),
                "max_len" => max_len = Some(one(&rest)?.parse::<usize>().map_err(|e| err(e.to_string()))?),
                "chars" => {
                    let parsed = rest
                        .iter()
                        .map(|v| v.parse::<u32>().ok().and_then(char::from_u32))
                        .collect::<Option<Vec<char>>>()
                        .ok_or_else(|| err("bad code point".into()))?;
                    chars = Some(parsed);
                }
                "count" => {
                    let [ctx, next, n] = rest[..] else {
                        return Err(err("count takes context, token and count".into()));
                    };
                    let ctx = ctx
                        .split(',')
                        .map(|t| if t == "^" { Ok(START) } else { t.parse::<u32>() })
                        .collect::<std::result::Result<Vec<u32>, _>>()
                        .map_err(|e| err(e.to_string()))?;
                    let next = next.parse::<usize>().map_err(|e| err(e.to_string()))?;
                    let n = n.parse::<u64>().map_err(|e| err(e.to_string()))?;
                    rows.push((lineno, ctx, next, n));
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        let missing = |what: &str| Error::Format {
            line: 0,
            msg: format!("missing {what}"),
        };
        let order = order.ok_or_else(|| missing("order"))?;
        let alpha = alpha.ok_or_else(|| missing("alpha"))?;
        let max_len = max_len.ok_or_else(|| missing("max_len"))?;
        let chars = chars.ok_or_else(|| missing("chars"))?;
        if order == 0 || max_len == 0 || chars.is_empty() || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Format {
                line: 0,
                msg: "order, max_len and vocabulary must be positive and alpha >= 0".into(),
            });
        }
        let vocab = chars.len() + 1;
        let mut counts: BTreeMap<Vec<u32>, Vec<u64>> = BTreeMap::new();
        for (line, ctx, next, n) in rows {
            let in_vocab = |t: &u32| *t == START || (*t as usize) < vocab;
            if ctx.len() != order || !ctx.iter().all(in_vocab) || next >= vocab {
                return Err(Error::Format {
                    line,
                    msg: "count row does not fit the declared order and vocabulary".into(),
                });
            }
            counts.entry(ctx).or_insert_with(|| vec![0; vocab])[next] += n;
        }
        Ok(Self::assemble(order, alpha, max_len, chars, counts))
    }
}

impl SequenceModel for MarkovTextModel {
    fn vocab_size(&self) -> usize {
        self.chars.len() + 1
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn eos(&self) -> Option<Token> {
        Some(Token(0))
    }

    /// `log(count + alpha)`.
    fn logits(&self, prefix: &[Token]) -> Vec<LogValue> {
        let row = match self.counts.get(&self.context(prefix)) {
            Some(row) => row,
            None if self.alpha == 0.0 => &self.unigram,
            None => return vec![self.alpha.ln(); self.vocab_size()],
        };
        row.iter().map(|&c| (c as f64 + self.alpha).ln()).collect()
    }

    fn render(&self, seq: &[Token]) -> String {
        seq.iter()
            .filter(|t| t.0 != 0)
            .map(|t| self.chars.get(t.index() - 1).copied().unwrap_or('\u{fffd}'))
            .collect()
    }

    fn parse_sequence(&self, text: &str) -> Result<Sequence> {
        text.chars()
            .map(|c| match self.chars.binary_search(&c) {
                Ok(i) => Ok(Token(i as u32 + 1)),
                Err(_) => domain(format!("character {c:?} not in the model vocabulary")),
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }
}
