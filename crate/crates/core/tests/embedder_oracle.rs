//! The built-in embedder checked against a from-scratch reading of its recipe.

use chronomem::embedder::{Embedder, HashEmbedder};
use chronomem::Embedding;
use proptest::prelude::*;

mod common;

use common::oracle;

fn embed(text: &str) -> Embedding<f64> {
    Embedder::<f64>::embed(&HashEmbedder, text).unwrap()
}

#[test]
fn matches_oracle_on_examples() {
    for text in ["", "Dolomites", "  dolomites!", "hiking in the Dolomites", "tax law", "a bc def ghij", "Crème brûlée ÅSA"] {
        assert_eq!(embed(text).as_slice(), oracle(text).as_slice(), "{text:?}");
    }
}

#[test]
fn cosine_against_hand_run() {
    let a = oracle("hiking in the Dolomites");
    let b = oracle("tax law");
    let expected = common::cosine(&a, &b);
    let got = embed("hiking in the Dolomites").cosine(&embed("tax law"));
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    assert_eq!(embed("hiking in the Dolomites").cosine(&embed("hiking in the Dolomites")), 1.0);
}

#[test]
fn f32_embedding_tracks_f64() {
    let wide = embed("Canadian Rockies trail guide");
    let narrow: Embedding<f32> = HashEmbedder.embed_text("Canadian Rockies trail guide");
    for (a, b) in wide.as_slice().iter().zip(narrow.as_slice()) {
        assert!((a - f64::from(*b)).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn random_text_matches_oracle(text in "\\PC{0,60}") {
        let got = embed(&text);
        let want = oracle(&text);
        prop_assert_eq!(got.as_slice(), want.as_slice());
        prop_assert!(got.is_zero() || (got.norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cosine_is_bounded(a in "[a-z ]{0,30}", b in "[a-z ]{0,30}") {
        let c = embed(&a).cosine(&embed(&b));
        prop_assert!((-1.0..=1.0).contains(&c));
    }
}
