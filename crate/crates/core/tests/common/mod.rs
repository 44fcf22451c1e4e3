#![allow(dead_code)]

pub mod gradcheck;
pub mod loss_oracle;
pub mod radiomics_oracle;
