use defectnet::HeadSpec;
use defectnet_cli::RunConfig;
use proptest::prelude::*;

fn config_text() -> impl Strategy<Value = String> {
    (
        (1usize..4, prop::collection::vec(1usize..64, 1..4), any::<bool>(), prop::collection::vec(1usize..512, 1..3)),
        (0usize..5, 1usize..64, 1usize..300, 1e-5f64..1.0, 0.0f64..0.99, any::<u64>()),
        (0.0f64..180.0, 0.0f64..0.5, any::<bool>(), any::<bool>(), 0.0f64..0.9),
        prop::option::of("[a-z]{1,8}"),
    )
        .prop_map(|((depth, widths, fc, fc_widths), (epochs, batch, steps, lr, m, seed), (rot, shift, h, v, vf), val)| {
            let mut widths = widths;
            widths.sort_unstable();
            let blocks = widths.iter().map(|w| format!("{depth}x{w}")).collect::<Vec<_>>().join(",");
            let fcw = fc_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
            format!(
                "arch = custom\nblocks = {blocks}\nhead = {}\nfc_widths = {fcw}\ninput_size = 32\n\
                 freeze_blocks = {}\nepochs = {epochs}\nbatch_size = {batch}\nsteps_per_epoch = {steps}\n\
                 learning_rate = {lr}\nmomentum = {m}\nseed = {seed}\nrotation_max_deg = {rot}\n\
                 shift_max_frac = {shift}\nhflip = {h}\nvflip = {v}\nval_fraction = {vf}\nval_dir = {}\n",
                if fc { "fc" } else { "gap" },
                widths.len().min(1),
                val.unwrap_or_default(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn render_parses_back_to_the_same_config(text in config_text()) {
        let cfg = RunConfig::from_str(&text).unwrap();
        let again = RunConfig::from_str(&cfg.render()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.render(), cfg.render());
    }

    #[test]
    fn comments_and_padding_are_ignored(text in config_text()) {
        let noisy: String = text.lines().map(|l| format!("  {l}   # note\n\n")).collect();
        prop_assert_eq!(RunConfig::from_str(&noisy).unwrap(), RunConfig::from_str(&text).unwrap());
    }

    #[test]
    fn fc_widths_only_matter_for_fc_heads(text in config_text(), w in 1usize..999) {
        let cfg = RunConfig::from_str(&text).unwrap();
        let alt = RunConfig::from_str(&format!("{text}fc_widths = {w}\n")).unwrap();
        match cfg.head {
            HeadSpec::Gap => prop_assert_eq!(alt, cfg),
            HeadSpec::Fc(_) => prop_assert_eq!(alt.head, HeadSpec::Fc(vec![w])),
        }
    }
}
