//! Per-question scores.

use crate::data::OPTION_LETTERS;
use crate::error::{CollectorError, Result};

/// First standalone A-D token, case-insensitive.
pub fn extract_option_letter(response: &str) -> Option<char> {
    response
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() == 1)
        .filter_map(|w| w.chars().next().map(|c| c.to_ascii_uppercase()))
        .find(|c| OPTION_LETTERS.contains(c))
}

/// 1.0 on a match, else 0.0. Non-strict compares extracted option letters;
/// strict compares the trimmed response to the trimmed gold.
pub fn score_exact_match(response: &str, gold: &str, strict: bool) -> f64 {
    let hit = if strict {
        response.trim() == gold.trim()
    } else {
        match extract_option_letter(response) {
            Some(l) => gold.trim().eq_ignore_ascii_case(&l.to_string()),
            None => {
                log::debug!("no option letter in response {response:?}");
                false
            }
        }
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

/// `exp(-mean logprob)`.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64> {
    Ok((-mean_logprob(token_logprobs)?).exp())
}

/// Negated natural log-perplexity, i.e. the mean token logprob; larger is better.
pub fn score_perplexity(token_logprobs: &[f64]) -> Result<f64> {
    mean_logprob(token_logprobs)
}

fn mean_logprob(lp: &[f64]) -> Result<f64> {
    if lp.is_empty() {
        return Err(CollectorError::Permanent("no gold-token logprobs in response".into()));
    }
    if let Some(x) = lp.iter().find(|x| !x.is_finite()) {
        return Err(CollectorError::Permanent(format!("non-finite token logprob {x}")));
    }
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_rules() {
        assert_eq!(score_exact_match("B", "B", false), 1.0);
        assert_eq!(score_exact_match("b", "B", false), 1.0);
        assert_eq!(score_exact_match("b", "B", true), 0.0);
        assert_eq!(score_exact_match("The answer is C", "C", false), 1.0);
        assert_eq!(score_exact_match("  B \n", "B", true), 1.0);
        assert_eq!(score_exact_match("(D) because", "D", false), 1.0);
        assert_eq!(score_exact_match("nothing here", "A", false), 0.0);
        assert_eq!(score_exact_match("Because A", "A", false), 1.0);
    }

    #[test]
    fn letter_extraction_skips_words() {
        assert_eq!(extract_option_letter("Answer: c."), Some('C'));
        assert_eq!(extract_option_letter("BAD"), None);
        assert_eq!(extract_option_letter("e then a"), Some('A'));
    }

    #[test]
    fn perplexity_closed_forms() {
        assert_eq!(perplexity(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(score_perplexity(&[0.0]).unwrap(), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((perplexity(&[-ln2, -ln2, -ln2]).unwrap() - 2.0).abs() < 1e-12);
        assert!((score_perplexity(&[-ln2, -ln2]).unwrap() + ln2).abs() < 1e-15);
        assert!((perplexity(&[-1.0]).unwrap() - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(score_perplexity(&[-1.0]).unwrap(), -1.0);
        assert!(score_perplexity(&[]).is_err());
    }
}
