pub mod boundary;
pub mod carleman;
pub mod cgo;
pub mod error;
pub mod fd;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod reconstruction;
pub mod stability;
mod stencil;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/boundary.md")]
    mod boundary {}
    #[doc = include_str!("../../../book/src/probes.md")]
    mod probes {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/carleman.md")]
    mod carleman {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
