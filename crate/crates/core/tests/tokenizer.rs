use std::sync::OnceLock;

use proptest::prelude::*;

use subtoken_attack::data::fixture_vocab;
use subtoken_attack::vocab::{load_vocab, Convention, Role, Vocabulary};

fn bert() -> &'static Vocabulary {
    static CELL: OnceLock<Vocabulary> = OnceLock::new();
    CELL.get_or_init(|| {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/data/bert-base-uncased-vocab.txt"
        );
        load_vocab(path, Convention::WordPiece).unwrap()
    })
}

fn pieces(v: &Vocabulary, ids: &[u32]) -> Vec<String> {
    ids.iter()
        .map(|&i| v.token(i).unwrap().to_string())
        .collect()
}

#[test]
fn bert_examples() {
    let v = bert();
    assert_eq!(pieces(v, &v.tokenize("bosfon")), ["bo", "##sf", "##on"]);
    assert_eq!(pieces(v, &v.tokenize("house")), ["house"]);
    assert_eq!(v.tokenize("a\u{2603}b"), [v.unk_id()]);

    let t = v.adv_tokenize("dallas").unwrap();
    assert_eq!(pieces(v, &t.subtoken_ids), ["da", "##ll", "##as"]);
    assert_eq!(t.roles, [Role::Start, Role::Middle, Role::End]);
    assert!(v.adv_tokenize("ab").is_err());

    let ids = v.tokenize("bosfon");
    assert_eq!(v.detokenize(&ids).unwrap(), "bosfon");
}

#[test]
fn bert_census_short_lengths() {
    let rows = bert().subword_length_census();
    assert_eq!(
        (rows[0].length, rows[0].count, rows[0].potential),
        (1, 26, 26)
    );
    assert_eq!(rows[0].ratio, 1.0);
    assert_eq!(
        (rows[1].length, rows[1].count, rows[1].potential),
        (2, 438, 676)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn adv_split_round_trips(word in "[a-z]{3,16}") {
        for v in [bert(), &fixture_vocab()] {
            if let Ok(t) = v.adv_tokenize(&word) {
                prop_assert_eq!(v.detokenize(&t.subtoken_ids).unwrap(), word.clone());
                prop_assert!(t.subtoken_ids.len() >= 3);
                prop_assert!(t.roles.contains(&Role::Middle));
                prop_assert_eq!(t.roles.len(), t.subtoken_ids.len());
                for &p in &t.replaceable_positions {
                    prop_assert_eq!(t.roles[p], Role::Middle);
                }
            }
        }
    }

    #[test]
    fn tokenize_is_total_and_deterministic(word in "[a-z0-9\u{e9}\u{20ac}]{1,12}") {
        let v = bert();
        let ids = v.tokenize(&word);
        prop_assert!(!ids.is_empty());
        prop_assert_eq!(&ids, &v.tokenize(&word));
        if !ids.contains(&v.unk_id()) {
            prop_assert_eq!(v.detokenize(&ids).unwrap(), word);
        }
    }
}
