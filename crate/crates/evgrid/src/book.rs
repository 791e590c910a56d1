//! Keeps the guide honest: every chapter under `book/src/` is included
//! here as a doc comment, so its code blocks compile and run under
//! `cargo test --doc`.

#[cfg(doctest)]
mod chapters {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/electrical-model.md")]
    mod electrical_model {}
    #[doc = include_str!("../../../book/src/hardware.md")]
    mod hardware {}
    #[doc = include_str!("../../../book/src/events-and-engine.md")]
    mod events_and_engine {}
    #[doc = include_str!("../../../book/src/algorithms.md")]
    mod algorithms {}
    #[doc = include_str!("../../../book/src/mpc.md")]
    mod mpc {}
    #[doc = include_str!("../../../book/src/tariffs-and-costs.md")]
    mod tariffs_and_costs {}
    #[doc = include_str!("../../../book/src/scenarios-and-cli.md")]
    mod scenarios_and_cli {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
