//! Brute-force BLEU used to cross-check [`super::bleu`]. Deliberately naive:
//! linear scans over n-gram lists, no hashing, all arithmetic in one place.

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(tokens[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Clipped matches and hypothesis n-gram count.
pub fn clipped_counts(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let hg = grams(hyp, n);
    let rgs: Vec<Vec<Vec<String>>> = refs.iter().map(|r| grams(r, n)).collect();
    let mut matched = 0;
    let mut done: Vec<Vec<String>> = Vec::new();
    for g in &hg {
        if done.contains(g) {
            continue;
        }
        done.push(g.clone());
        let in_hyp = occurrences(&hg, g);
        let mut best = 0;
        for rg in &rgs {
            best = best.max(occurrences(rg, g));
        }
        matched += in_hyp.min(best);
    }
    (matched, hg.len())
}

/// Corpus BLEU-n; `eps` switches on add-epsilon smoothing.
pub fn bleu(segments: &[(Vec<String>, Vec<Vec<String>>)], n: usize, eps: Option<f64>) -> f64 {
    let mut num = vec![0usize; n];
    let mut den = vec![0usize; n];
    let mut c = 0usize;
    let mut r = 0usize;
    for (hyp, refs) in segments {
        for k in 1..=n {
            let (m, t) = clipped_counts(hyp, refs, k);
            num[k - 1] += m;
            den[k - 1] += t;
        }
        c += hyp.len();
        let mut best: Option<usize> = None;
        for rf in refs {
            let len = rf.len();
            best = match best {
                None => Some(len),
                Some(b) => {
                    let db = (b as i64 - hyp.len() as i64).abs();
                    let dl = (len as i64 - hyp.len() as i64).abs();
                    if dl < db || (dl == db && len < b) {
                        Some(len)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        r += best.unwrap_or(0);
    }
    if c == 0 {
        return 0.0;
    }
    let mut product_log = 0.0;
    for k in 0..n {
        let p = if num[k] == 0 {
            match eps {
                None => return 0.0,
                Some(e) => e / (den[k].max(1) as f64),
            }
        } else {
            num[k] as f64 / den[k] as f64
        };
        product_log += p.ln() / n as f64;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * product_log.exp()
}
