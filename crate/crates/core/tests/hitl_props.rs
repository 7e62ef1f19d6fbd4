use msabn::data::{AttentionMap, BBox};
use msabn::hitl::{binarize_attention, copy_replace, frac_attention_outside, select_pool, AttentionAudit};
use msabn::imaging::Image;
use proptest::prelude::*;

fn bbox_in(w: u32, h: u32) -> impl Strategy<Value = BBox> {
    (0..w, 0..h).prop_flat_map(move |(x0, y0)| {
        (x0 + 1..=w, y0 + 1..=h).prop_map(move |(x1, y1)| BBox::new(x0, y0, x1, y1))
    })
}

fn image(w: usize, h: usize, seed: u8) -> Image {
    let data = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed)).collect();
    Image::from_raw(w, h, 3, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fraction_is_within_unit_interval(values in prop::collection::vec(0f32..=1.0, 64), b in bbox_in(8, 8), t in 0.01f32..0.99) {
        let map = AttentionMap::new("p", 8, 8, values).unwrap();
        let f = frac_attention_outside(&binarize_attention(&map, t).unwrap(), &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(frac_attention_outside(&binarize_attention(&map, t).unwrap(), &BBox::full(8, 8)), 0.0);
    }

    #[test]
    fn paste_is_local(tb in bbox_in(24, 20), sb in bbox_in(16, 16), s1 in any::<u8>(), s2 in any::<u8>()) {
        let src = image(16, 16, s1);
        let dst = image(24, 20, s2);
        let out = copy_replace(&src, &sb, &dst, &tb).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                if !tb.contains(x, y) {
                    prop_assert_eq!(out.pixel(x, y), dst.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn pool_shrinks_as_lambda_grows(fracs in prop::collection::vec(0f64..=1.0, 1..40), l1 in 0f64..=1.0, l2 in 0f64..=1.0) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let audits: Vec<AttentionAudit> = fracs
            .iter()
            .enumerate()
            .map(|(i, &f)| AttentionAudit {
                sample_id: format!("s{i}"),
                frac_out: f,
                total_on_pixels: 1,
                selected: false,
                zero_attention: false,
                bbox: Some(BBox::new(0, 0, 1, 1)),
            })
            .collect();
        let big = select_pool(&mut audits.clone(), lo).unwrap();
        let small = select_pool(&mut audits.clone(), hi).unwrap();
        for (id, _) in &small.annotated {
            prop_assert!(big.annotated.iter().any(|(j, _)| j == id));
        }
        prop_assert_eq!(big.annotated.len() + big.plain.len(), fracs.len());
        prop_assert!(select_pool(&mut audits.clone(), 1.0).unwrap().annotated.is_empty());
    }
}
