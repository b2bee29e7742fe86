//! Word error rate by minimal edit distance.

use crate::error::{bail_validation, Result};

/// Minimal number of substitutions, deletions and insertions turning `a`
/// into `b`.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `edit_distance / len(reference)`; may exceed 1.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        bail_validation!("word error rate needs a non-empty reference");
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn fixtures() {
        let r = words("bin blue at e seven please");
        assert_eq!(wer(&r, &r).unwrap(), 0.0);
        assert_eq!(
            wer(&r, &words("bin blue at c seven please")).unwrap(),
            1.0 / 6.0
        );
        assert_eq!(wer(&r, &[]).unwrap(), 1.0);
        assert_eq!(wer(&words("a"), &words("b c d")).unwrap(), 3.0);
        assert!(wer::<&str>(&[], &["a"]).is_err());
    }
}
