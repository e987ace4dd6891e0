//! Independent reference implementations shared by the integration tests.

pub const D: usize = 64;

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 14_695_981_039_346_656_037;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(1_099_511_628_211);
    }
    h
}

pub fn oracle(text: &str) -> Vec<f64> {
    let lower = text.to_lowercase();
    let mut acc = [0.0f64; D];
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let chars: Vec<char> = word.chars().collect();
        let mut tokens = vec![word.to_owned()];
        for i in 0..chars.len().saturating_sub(2) {
            tokens.push(chars[i..i + 3].iter().collect());
        }
        for t in tokens {
            let h = fnv(t.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[(h % D as u64) as usize] += sign;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|x| *x /= norm);
    }
    acc.to_vec()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
