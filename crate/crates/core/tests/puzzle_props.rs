use msabn::candle_core::{Device, Tensor};
use msabn::puzzle::{merge, reconstruction_loss, tile};
use proptest::prelude::*;

fn tensor(values: &[f32], shape: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_vec(values.to_vec(), shape, &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn merge_inverts_tile(b in 1usize..4, c in 1usize..4, hh in 1usize..5, hw in 1usize..5, seed in any::<u32>()) {
        let (h, w) = (2 * hh, 2 * hw);
        let n = b * c * h * w;
        let values: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 7.0).collect();
        let x = tensor(&values, (b, c, h, w));
        let t = tile(&x).unwrap();
        prop_assert_eq!(t.tiles.dims(), &[4 * b, c, hh, hw]);
        prop_assert_eq!(flat(&merge(&t.tiles).unwrap()), values.clone());
        // every tile pixel maps back to its source quadrant
        let tiles = flat(&t.tiles);
        for (i, v) in tiles.iter().enumerate() {
            let (tw, rem) = (i / (c * hh * hw), i % (c * hh * hw));
            let (ch, y, xx) = (rem / (hh * hw), (rem / hw) % hh, rem % hw);
            let (src, q) = (tw / 4, tw % 4);
            let (oy, ox) = ((q / 2) * hh, (q % 2) * hw);
            prop_assert_eq!(*v, values[((src * c + ch) * h + oy + y) * w + ox + xx]);
        }
    }

    #[test]
    fn loss_matches_brute_force(b in 1usize..3, k in 2usize..5, s in 1usize..5, seed in any::<u64>()) {
        let n = b * k * s * s;
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2000) as f32 / 1000.0 - 1.0
        };
        let full: Vec<f32> = (0..n).map(|_| next()).collect();
        let merged: Vec<f32> = (0..n).map(|_| next()).collect();
        let labels: Vec<u32> = (0..b).map(|i| ((seed as usize + i) % k) as u32).collect();
        let got = reconstruction_loss(
            &tensor(&full, (b, k, s, s)),
            &tensor(&merged, (b, k, s, s)),
            &Tensor::new(labels.as_slice(), &Device::Cpu).unwrap(),
        )
        .unwrap()
        .to_scalar::<f32>()
        .unwrap();
        let mut sum = 0f64;
        for (i, &y) in labels.iter().enumerate() {
            for p in 0..s * s {
                let idx = (i * k + y as usize) * s * s + p;
                sum += (full[idx] as f64 - merged[idx] as f64).abs();
            }
        }
        let want = sum / (b * s * s) as f64;
        prop_assert!((got as f64 - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn loss_sees_quadrant_permutation() {
    // merged CAM built from the full one with two quadrants swapped
    let values: Vec<f32> = (0..16).map(|v| v as f32).collect();
    let full = tensor(&values, (1, 1, 4, 4));
    let t = tile(&full).unwrap();
    let idx = Tensor::new(&[1u32, 0, 2, 3], &Device::Cpu).unwrap();
    let swapped = merge(&t.tiles.index_select(&idx, 0).unwrap()).unwrap();
    let labels = Tensor::new(&[0u32], &Device::Cpu).unwrap();
    let same = reconstruction_loss(&full, &merge(&t.tiles).unwrap(), &labels).unwrap();
    let diff = reconstruction_loss(&full, &swapped, &labels).unwrap();
    assert_eq!(same.to_scalar::<f32>().unwrap(), 0.0);
    assert!(diff.to_scalar::<f32>().unwrap() > 0.0);
}
