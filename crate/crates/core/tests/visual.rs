use subtoken_attack::data::fixture_vocab;
use subtoken_attack::exec::Parallelism;
use subtoken_attack::visual::{
    build_visual_table, render_glyph, visual_embed, Extractor, Font, CANVAS,
};

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Share of inked pixels (in either bitmap) that only one of them inks.
#[test]
fn l_and_one_share_most_ink() {
    let font = Font::bundled();
    let l = render_glyph("l", &font, CANVAS, CANVAS).unwrap().ink();
    let one = render_glyph("1", &font, CANVAS, CANVAS).unwrap().ink();
    let union = l.iter().zip(&one).filter(|(a, b)| **a || **b).count();
    let differ = l.iter().zip(&one).filter(|(a, b)| a != b).count();
    let share = differ as f64 / union as f64;
    assert!(
        share < 0.20,
        "{differ} of {union} ink pixels differ ({share:.3})"
    );
}

#[test]
fn l_is_closer_to_one_than_to_w() {
    let font = Font::bundled();
    let emb = |s: &str| {
        visual_embed(
            &render_glyph(s, &font, CANVAS, CANVAS).unwrap(),
            Extractor::Flat,
        )
        .unwrap()
    };
    let (l, one, w) = (emb("l"), emb("1"), emb("w"));
    assert!(distance(&l, &one) < distance(&l, &w));
}

#[test]
fn double_l_lookalike_is_a_near_neighbour() {
    let vocab = fixture_vocab();
    let table = build_visual_table(
        &vocab,
        &Font::bundled(),
        Extractor::Flat,
        Parallelism::Sequential,
    )
    .unwrap();
    let ll = vocab.id("##ll").unwrap() as usize;
    let ones = vocab.id("##11").unwrap() as usize;
    let row = table.vectors.row(ll);
    let d = |j: usize| {
        let diff = &row - &table.vectors.row(j);
        diff.dot(&diff).sqrt()
    };
    let mut others: Vec<f64> = (0..vocab.len())
        .filter(|&j| j != ll && vocab.is_attachable(j as u32))
        .map(d)
        .collect();
    others.sort_by(f64::total_cmp);
    let p10 = others[others.len() / 10];
    assert!(
        d(ones) < p10,
        "d(##ll, ##11) = {} vs 10th percentile {p10}",
        d(ones)
    );
}
