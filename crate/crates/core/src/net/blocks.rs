//! Building blocks of the fusion network. Every block reads its parameters
//! from a [`ParamStore`] under a name prefix such as `"ms_expert.3."`.

use messfn_tensor::{ConvSpec, ParamStore, Scalar, Scale, Tape, Tensor, Var};

use crate::error::Result;

/// Parameter declaration: name, shape, and fan-in for weights (`None` for biases).
pub type ParamDecl = (String, Vec<usize>, Option<usize>);

pub(crate) fn declare_conv(out: &mut Vec<ParamDecl>, name: &str, spec: ConvSpec) {
    out.push((format!("{name}.weight"), spec.weight_shape().to_vec(), Some(spec.fan_in())));
    if spec.has_bias {
        out.push((format!("{name}.bias"), vec![spec.out_channels], None));
    }
}

pub(crate) fn conv<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let w = tape.param(store, store.id(&format!("{name}.weight"))?)?;
    let b = if spec.has_bias {
        Some(tape.param(store, store.id(&format!("{name}.bias"))?)?)
    } else {
        None
    };
    Ok(tape.conv2d(x, w, b, spec)?)
}

pub(crate) fn conv_relu<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let y = conv(tape, store, name, x, spec)?;
    Ok(tape.relu(y)?)
}

pub fn declare_brc(out: &mut Vec<ParamDecl>, prefix: &str, bands: usize) {
    declare_conv(out, &format!("{prefix}conv"), ConvSpec::same(bands, bands, 3));
}

/// Bicubic upsampling by `r` followed by a 3x3 band-preserving convolution.
pub fn brc_upsample<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, ms: Var, r: usize) -> Result<Var> {
    let bands = tape.shape(ms)[1];
    let up = tape.bicubic_resize(ms, Scale::up(r))?;
    conv(tape, store, &format!("{prefix}conv"), up, ConvSpec::same(bands, bands, 3))
}

pub fn declare_rb(out: &mut Vec<ParamDecl>, prefix: &str, c: usize) {
    declare_conv(out, &format!("{prefix}conv1"), ConvSpec::same(c, c, 3));
    declare_conv(out, &format!("{prefix}conv2"), ConvSpec::same(c, c, 3));
}

/// Residual block: `f + conv(relu(conv(f)))`.
pub fn rb_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, f: Var) -> Result<Var> {
    let c = tape.shape(f)[1];
    let spec = ConvSpec::same(c, c, 3);
    let h = conv_relu(tape, store, &format!("{prefix}conv1"), f, spec)?;
    let h = conv(tape, store, &format!("{prefix}conv2"), h, spec)?;
    Ok(tape.add(h, f)?)
}

pub fn declare_rsab(out: &mut Vec<ParamDecl>, prefix: &str, c: usize, k: usize) {
    declare_conv(out, &format!("{prefix}body"), ConvSpec::same(c, c, 3));
    out.push((format!("{prefix}attn.weight"), vec![k], Some(k)));
}

/// Channel attention weights of an RSAB: `sigmoid(conv1d(GAP(body)))`, shape `[N, 1, C]`.
pub fn rsab_mask<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, body: Var) -> Result<Var> {
    let (n, c) = (tape.shape(body)[0], tape.shape(body)[1]);
    let z = tape.global_avg_pool(body)?;
    let z = tape.reshape(z, [n, 1, c])?;
    let w = tape.param(store, store.id(&format!("{prefix}attn.weight"))?)?;
    let a = tape.conv1d(z, w)?;
    Ok(tape.sigmoid(a)?)
}

/// Residual spectral attention block.
pub fn rsab_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, f: Var) -> Result<Var> {
    let c = tape.shape(f)[1];
    let body = conv_relu(tape, store, &format!("{prefix}body"), f, ConvSpec::same(c, c, 3))?;
    let mask = rsab_mask(tape, store, prefix, body)?;
    let recal = tape.mul_channel(body, mask)?;
    Ok(tape.add(recal, f)?)
}

const BRANCHES: [(&str, usize, usize); 5] = [
    ("branch1", 1, 1),
    ("branch3a", 1, 3),
    ("branch3b", 3, 1),
    ("branch5a", 1, 5),
    ("branch5b", 5, 1),
];

pub fn declare_rmsab(out: &mut Vec<ParamDecl>, prefix: &str, c: usize, isa: usize) {
    for (name, kh, kw) in BRANCHES {
        declare_conv(out, &format!("{prefix}{name}"), ConvSpec::same_rect(c, c, kh, kw));
    }
    declare_conv(out, &format!("{prefix}fuse"), ConvSpec::same(3 * c, c, 1));
    declare_conv(out, &format!("{prefix}isa"), ConvSpec::same(2, 1, isa).without_bias());
}

/// Inception part of an RMSAB: three branches fused by a 1x1 convolution.
pub fn inception<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, f: Var) -> Result<Var> {
    let c = tape.shape(f)[1];
    let run = |tape: &mut Tape<T>, name: &str, x: Var, kh: usize, kw: usize| {
        conv_relu(tape, store, &format!("{prefix}{name}"), x, ConvSpec::same_rect(c, c, kh, kw))
    };
    let b1 = run(tape, "branch1", f, 1, 1)?;
    let b3 = run(tape, "branch3a", f, 1, 3)?;
    let b3 = run(tape, "branch3b", b3, 3, 1)?;
    let b5 = run(tape, "branch5a", f, 1, 5)?;
    let b5 = run(tape, "branch5b", b5, 5, 1)?;
    let cat = tape.concat_channels(&[b1, b3, b5])?;
    conv(tape, store, &format!("{prefix}fuse"), cat, ConvSpec::same(3 * c, c, 1))
}

/// Spatial attention mask `[N, 1, H, W]` from the channel variance and mean maps.
pub fn isa_mask<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let isa = store.by_name(&format!("{prefix}isa.weight")).map_or(7, |p| p.shape()[2]);
    let var = tape.global_var_pool(x)?;
    let mean = tape.channel_mean(x)?;
    let stats = tape.concat_channels(&[var, mean])?;
    let a = conv(tape, store, &format!("{prefix}isa"), stats, ConvSpec::same(2, 1, isa).without_bias())?;
    Ok(tape.sigmoid(a)?)
}

/// Residual multi-scale spatial attention block.
pub fn rmsab_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, f: Var) -> Result<Var> {
    let inc = inception(tape, store, prefix, f)?;
    let mask = isa_mask(tape, store, prefix, inc)?;
    let att = tape.mul_spatial(inc, mask)?;
    Ok(tape.add(att, f)?)
}

/// Per-level fusion: `f_m + f_p + f_ss`, or `f_ss` alone when the level is
/// disconnected. A missing `f_ss` stands for zeros.
pub fn fuse_level<T: Scalar>(tape: &mut Tape<T>, f_m: Var, f_p: Var, f_ss: Option<Var>, disconnected: bool) -> Result<Var> {
    if disconnected {
        return match f_ss {
            Some(ss) => Ok(ss),
            None => Ok(tape.constant(Tensor::zeros(tape.shape(f_m).to_vec()))?),
        };
    }
    let mp = tape.add(f_m, f_p)?;
    match f_ss {
        Some(ss) => Ok(tape.add(mp, ss)?),
        None => Ok(mp),
    }
}
