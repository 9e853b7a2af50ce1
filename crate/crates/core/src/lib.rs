pub mod diagnostics;
pub mod domains;
pub mod hyperbolic;
pub mod mesher;
pub mod solver;
pub mod surface;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/disk.md")]
    mod disk {}
    #[doc = include_str!("../../../book/src/domains.md")]
    mod domains {}
    #[doc = include_str!("../../../book/src/meshing.md")]
    mod meshing {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    mod surfaces {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
