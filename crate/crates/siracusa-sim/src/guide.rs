//! The guide's code blocks, compiled and run as doc-tests so the book
//! can never drift from the library (mdbook itself does not run
//! examples against the real crate).

#[doc = include_str!("../../../book/src/index.md")]
pub struct Index;

#[doc = include_str!("../../../book/src/functional-model.md")]
pub struct FunctionalModel;

#[doc = include_str!("../../../book/src/timing-model.md")]
pub struct TimingModel;

#[doc = include_str!("../../../book/src/memory.md")]
pub struct Memory;

#[doc = include_str!("../../../book/src/paging.md")]
pub struct Paging;

#[doc = include_str!("../../../book/src/scenarios.md")]
pub struct Scenarios;

#[doc = include_str!("../../../book/src/calibration.md")]
pub struct Calibration;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct Cli;
