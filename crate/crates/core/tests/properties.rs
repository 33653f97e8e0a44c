use proptest::prelude::*;

use mwcnn::eeg_io::bdf::{encode_bdf, parse_bdf};
use mwcnn::eeg_io::raw::{decode_raw_matrix, encode_raw_matrix};
use mwcnn::eeg_io::{decode_int24, encode_int24, BdfChannel, EegRecording, Event, EventKind};
use mwcnn::gradcheck::{finite_diff_check, GradCheckLayer};
use mwcnn::metrics::{confusion, metrics, pool_counts, ConfusionCounts};
use mwcnn::model::{build_arch_with_pooling, decode_params, encode_params, init_params, predict};
use mwcnn::nn::{conv2d_valid, maxpool, maxpool_grads, softmax, softmax_xent, ConvLayerParams, PoolSpec};
use mwcnn::preprocess::windows::{forbidden_spans, mw_window_starts, place_windows};
use mwcnn::preprocess::{zscore, Label};
use mwcnn::rng;
use mwcnn::train::make_folds;
use mwcnn::Tensor;
use rand::Rng;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[11]);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn labels_from(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| if b { Label::Mw } else { Label::Fs }).collect()
}

proptest! {
    #[test]
    fn conv_width_law_and_linearity(
        fi in 1usize..3, fo in 1usize..3, h in 1usize..4, w in 3usize..20,
        kh in 1usize..4, kw in 1usize..6, seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0,
    ) {
        prop_assume!(kh <= h && kw <= w);
        let p = ConvLayerParams::new(tensor(&[fo, fi, kh, kw], seed), Tensor::zeros(&[fo])).unwrap();
        let x = tensor(&[fi, h, w], seed ^ 1);
        let y = tensor(&[fi, h, w], seed ^ 2);
        let fx = conv2d_valid(&x, &p).unwrap();
        prop_assert_eq!(fx.shape(), &[fo, h - kh + 1, w - kw + 1]);
        let fy = conv2d_valid(&y, &p).unwrap();
        let mut mix = x.clone();
        mix.scale(a);
        let mut by = y.clone();
        by.scale(b);
        mix.add_assign(&by).unwrap();
        let fmix = conv2d_valid(&mix, &p).unwrap();
        for ((m, u), v) in fmix.data().iter().zip(fx.data()).zip(fy.data()) {
            prop_assert!((m - (a * u + b * v)).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_width_law_and_mass(w in 1usize..40, k in 1usize..6, s in 1usize..6, seed in any::<u64>()) {
        prop_assume!(k <= w);
        let spec = PoolSpec::new(k, s);
        let x = tensor(&[2, 1, w], seed);
        let out = maxpool(&x, spec).unwrap();
        let mut expected = (w - k).div_ceil(s) + 1;
        if (expected - 1) * s >= w {
            expected -= 1;
        }
        prop_assert!((expected - 1) * s < w);
        prop_assert_eq!(out.output.shape(), &[2, 1, expected]);
        prop_assert_eq!(spec.output_width(w), Some(expected));
        let up = tensor(out.output.shape(), seed ^ 3);
        let g = maxpool_grads(&out.argmax, &up, x.shape()).unwrap();
        prop_assert!((g.sum() - up.sum()).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..6), label in 0usize..2) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(softmax_xent(&logits, label).unwrap().loss >= 0.0);
    }

    #[test]
    fn int24_roundtrip(v in -8_388_608i32..=8_388_607) {
        prop_assert_eq!(decode_int24(encode_int24(v)), v);
    }

    #[test]
    fn bdf_sample_count(channels in 1usize..4, spr in 1usize..20, records in 1usize..5, seed in any::<u64>()) {
        let chans: Vec<BdfChannel> = (0..channels).map(|i| BdfChannel::biosemi(format!("C{i}"), spr)).collect();
        let mut r = rng::stream(seed, &[]);
        let digital: Vec<Vec<i32>> = (0..channels)
            .map(|_| (0..spr * records).map(|_| r.gen_range(-8_388_608..=8_388_607)).collect())
            .collect();
        let rec = parse_bdf(&encode_bdf(&chans, &digital, 1.0).unwrap()).unwrap();
        prop_assert_eq!(rec.n_channels(), channels);
        prop_assert_eq!(rec.n_samples(), records * spr);
    }

    #[test]
    fn zscore_channels_are_standardized(c in 1usize..4, t in 2usize..50, seed in any::<u64>(), flat in any::<bool>()) {
        let mut x = tensor(&[c, t], seed).cast::<f32>();
        if flat {
            x.data_mut()[..t].fill(3.5);
        }
        let z = zscore(&x);
        for (ch, row) in z.data().chunks(t).enumerate() {
            let mean: f64 = row.iter().map(|&v| f64::from(v)).sum::<f64>() / t as f64;
            let var: f64 = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / t as f64;
            if flat && ch == 0 {
                prop_assert!(row.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!(mean.abs() < 1e-5);
                prop_assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn fold_partition_laws(bits in prop::collection::vec(any::<bool>(), 10..120), k in 3usize..11, seed in any::<u64>()) {
        let labels = labels_from(&bits);
        let plans = make_folds(&labels, k, seed).unwrap();
        prop_assert_eq!(plans.len(), k);
        let n = labels.len();
        let n_mw = bits.iter().filter(|&&b| b).count();
        let mut tested = vec![0; n];
        for p in &plans {
            let mut all: Vec<usize> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(&all, &(0..n).collect::<Vec<_>>());
            p.test.iter().for_each(|&i| tested[i] += 1);
            let mw = p.test.iter().filter(|&&i| labels[i] == Label::Mw).count();
            prop_assert!((mw as f64 - n_mw as f64 / k as f64).abs() <= 1.0);
            prop_assert!((p.test.len() as f64 - n as f64 / k as f64).abs() < 1.0);
        }
        prop_assert!(tested.iter().all(|&c| c == 1));
        prop_assert_eq!(plans, make_folds(&labels, k, seed).unwrap());
    }

    #[test]
    fn metric_laws(preds in prop::collection::vec(any::<bool>(), 1..60), truth_seed in any::<u64>(), cut in 0usize..60) {
        let mut r = rng::stream(truth_seed, &[]);
        let truth: Vec<bool> = preds.iter().map(|_| r.gen()).collect();
        let (p, t) = (labels_from(&preds), labels_from(&truth));
        let whole = confusion(&p, &t).unwrap();
        prop_assert_eq!(whole.total() as usize, p.len());
        let cut = cut.min(p.len());
        let parts: Vec<ConfusionCounts> = [(0, cut), (cut, p.len())]
            .iter()
            .filter(|(a, b)| a < b)
            .map(|&(a, b)| confusion(&p[a..b], &t[a..b]).unwrap())
            .collect();
        prop_assert_eq!(pool_counts(&parts).unwrap(), whole);
        let m = metrics(&whole).unwrap();
        let correct = preds.iter().zip(&truth).filter(|(a, b)| a == b).count();
        prop_assert_eq!(m.accuracy, correct as f64 / preds.len() as f64);
        for rate in [m.sensitivity, m.specificity, m.precision, m.npv].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_layer_gradients(
        seed in any::<u64>(), fi in 1usize..3, fo in 1usize..3, h in 1usize..3, w in 4usize..9,
        kw in 1usize..4, nin in 1usize..6, nout in 1usize..4, pw in 2usize..10, pk in 1usize..4, ps in 1usize..4,
    ) {
        let conv = GradCheckLayer::Conv { in_maps: fi, height: h, width: w, out_maps: fo, kernel_h: h, kernel_w: kw };
        prop_assert!(finite_diff_check(&conv, seed).unwrap() <= 1e-4);
        let dense = GradCheckLayer::Dense { in_features: nin, out_features: nout };
        prop_assert!(finite_diff_check(&dense, seed).unwrap() <= 1e-4);
        prop_assume!(pk <= pw);
        let pool = GradCheckLayer::MaxPool { maps: 2, height: 1, width: pw, spec: PoolSpec::new(pk, ps) };
        prop_assert!(finite_diff_check(&pool, seed).unwrap() <= 1e-4);
    }

    #[test]
    fn raw_matrix_roundtrip(c in 1usize..5, n in 1usize..200, seed in any::<u64>(), subject in any::<u8>(), session in any::<u16>()) {
        let data = tensor(&[c, n], seed).cast::<f32>();
        let labels = (0..c).map(|i| format!("ch {i}")).collect();
        let rec = EegRecording::new(data, 512.0, labels, subject, session).unwrap();
        let back = decode_raw_matrix(&encode_raw_matrix(&rec).unwrap()).unwrap();
        prop_assert_eq!(&back.data, &rec.data);
        prop_assert_eq!(&back.channel_labels, &rec.channel_labels);
        prop_assert_eq!((back.sampling_rate, back.subject_id, back.session_id), (512.0, subject, session));
    }

    #[test]
    fn placed_windows_are_disjoint_and_contained(
        lens in prop::collection::vec(0usize..300, 1..6), len in 1usize..40, seed in any::<u64>(), frac in 0.0f64..1.0,
    ) {
        let mut start = 0;
        let spans: Vec<(usize, std::ops::Range<usize>)> = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let r = start..start + l;
                start += l + 7;
                (i, r)
            })
            .collect();
        let capacity: usize = lens.iter().map(|l| l / len).sum();
        let count = (capacity as f64 * frac) as usize;
        let mut r = rng::stream(seed, &[]);
        let placed = place_windows(&spans, len, count, &mut r).unwrap();
        prop_assert_eq!(placed.len(), count);
        let mut windows: Vec<std::ops::Range<usize>> = Vec::new();
        for &(owner, s) in &placed {
            let span = &spans[owner].1;
            prop_assert!(s >= span.start && s + len <= span.end);
            windows.push(s..s + len);
        }
        windows.sort_by_key(|w| w.start);
        prop_assert!(windows.windows(2).all(|p| p[0].end <= p[1].start));
        prop_assert!(place_windows(&spans, len, capacity + 1, &mut r).is_err());
    }

    #[test]
    fn mw_windows_end_before_press(fs in 16usize..256, presses in prop::collection::vec(0usize..50_000, 0..8), secs in 1u32..9) {
        let fs_f = fs as f64;
        let n = 50_000;
        let len = secs as usize * fs;
        let events: Vec<Event> = presses
            .iter()
            .map(|&p| Event { session_id: 1, sample_index: p, kind: EventKind::ButtonPress })
            .collect();
        let (starts, skipped) = mw_window_starts(n, &(0..n), fs_f, &events, len);
        prop_assert_eq!(starts.len() + skipped, presses.len());
        for s in starts {
            prop_assert!(s + len <= n);
            let p = s + 10 * fs;
            prop_assert!(presses.contains(&p));
            prop_assert!(s + len + 2 * fs <= p);
            if secs == 8 {
                prop_assert_eq!(s + len + 2 * fs, p);
            }
        }
        for f in forbidden_spans(n, fs_f, &events) {
            prop_assert!(f.end <= n && f.start <= f.end);
        }
    }

    #[test]
    fn predictions_are_distributions_and_params_roundtrip(seed in any::<u64>()) {
        let arch = build_arch_with_pooling(2, 160, 3, [(2, 2); 4], 0.2).unwrap();
        let params = init_params(&arch, seed).unwrap();
        let back = decode_params(&encode_params(&params), &arch).unwrap();
        prop_assert_eq!(&back, &params);
        let x = tensor(&[2, 160], seed).cast::<f32>();
        let (label, probs) = predict(&params, &x).unwrap();
        prop_assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        prop_assert_eq!(label, if probs[1] > probs[0] { Label::Mw } else { Label::Fs });
        prop_assert_eq!(predict(&params, &x).unwrap().1, probs);
    }
}
