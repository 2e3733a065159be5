//! Prognostics toolkit for colorectal liver metastases: prompt-propagated
//! volumetric segmentation, radiomic feature extraction, multiple-instance
//! survival modelling and the survival-statistics evaluation protocol.

pub mod volgrid;
pub mod evalkit;
pub mod pipeline;
pub mod promptseg;
pub mod radiomics;
pub mod samonai;
pub mod survaminn;
pub mod survstats;
pub mod synthgen;
