/// Optimal-string-alignment distance: insertions, deletions, substitutions
/// and transpositions of adjacent items, with no item edited twice.
pub fn dld<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    // Three rolling rows: i-2, i-1, i.
    let mut prev2 = vec![0usize; m + 1];
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut d = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                d = d.min(prev2[j - 2] + 1);
            }
            cur[j] = d;
        }
        std::mem::swap(&mut prev2, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(dld(b"abc", b"abc"), 0);
        assert_eq!(dld(b"abc", b"acb"), 1);
        assert_eq!(dld(b"abcd", b""), 4);
        assert_eq!(dld(b"", b"xy"), 2);
        assert_eq!(dld(b"kitten", b"sitting"), 3);
        // Restricted variant: "ca" -> "abc" cannot reuse the transposed pair.
        assert_eq!(dld(b"ca", b"abc"), 3);
    }
}
