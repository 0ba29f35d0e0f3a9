#include "dhhqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>

#include "dhhqa/render.hpp"
#include "dhhqa/rng.hpp"

namespace dhhqa {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0 || epochs <= 0 || batch_size <= 0 || crop_size <= 0 || eval_crops <= 0)
    throw std::invalid_argument("train config: all fields must be positive");
}

AdamOptimizer::AdamOptimizer(ParamSet& params, const TrainConfig& cfg)
    : params_(params), lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2),
      eps_(cfg.adam_eps) {
  for (auto& [name, t] : params_.items) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t pi = 0; pi < params_.items.size(); ++pi) {
    Tensor& t = params_.items[pi].second;
    if (t.grad().size() != t.numel()) continue;  // never touched by backward
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double g = t.grad()[i];
      m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * g;
      v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g;
      t.data()[i] -= lr_ * (m_[pi][i] / bc1) / (std::sqrt(v_[pi][i] / bc2) + eps_);
    }
  }
}

namespace {

struct Row {
  const SampleRecord* rec;
  ProjectionImage projection;  // cached, mask included for crop rejection
};

int class_of(const SampleRecord& r) { return static_cast<int>(r.spec.kind); }

// forward one already-sized patch through encoder and both heads
std::pair<Tensor, Tensor> forward_heads(const Image& patch, const VitConfig& cfg,
                                        const ParamSet& params) {
  const Tensor emb = encode(patch, cfg, params);
  return {classify_head(emb, cfg, params), regress_head(emb, cfg, params)};
}

// Fused 32-bit training path. Mirrors encode/classify_head/regress_head/
// joint_loss exactly in structure but runs batched on float activations with
// hand-written backward passes; master weights stay 64-bit and Adam consumes
// the gradients this engine writes back into the ParamSet. Validated against
// the reference autograd computation in the unit suite.
class FusedVit {
 public:
  FusedVit(const VitConfig& cfg, ParamSet& params) : cfg_(cfg), params_(params) {
    for (std::size_t i = 0; i < params.items.size(); ++i) index_[params.items[i].first] = i;
    w_.resize(params.items.size());
    g_.resize(params.items.size());
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      w_[i].resize(params.items[i].second.numel());
      g_[i].resize(params.items[i].second.numel());
    }
    refresh_weights();
  }

  // copy 64-bit master weights into the float mirrors (after every Adam step)
  void refresh_weights() {
    for (std::size_t i = 0; i < w_.size(); ++i) {
      const std::vector<double>& src = params_.items[i].second.data();
      for (std::size_t j = 0; j < src.size(); ++j) w_[i][j] = static_cast<float>(src[j]);
    }
  }

  // forward + backward for one batch; accumulates gradients into the ParamSet
  // (as doubles) and returns the joint loss
  double forward_backward(const std::vector<Image>& patches, const std::vector<int>& cls_targets,
                          const std::vector<double>& mos01, double lambda) {
    const std::size_t B = patches.size();
    const std::size_t T0 = static_cast<std::size_t>(cfg_.n_tokens());
    const std::size_t T = T0 + 1;
    const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
    const std::size_t H = static_cast<std::size_t>(cfg_.n_heads);
    const std::size_t dh = d / H;
    const std::size_t hid = static_cast<std::size_t>(cfg_.mlp_ratio) * d;
    const std::size_t pd = static_cast<std::size_t>(cfg_.vit_patch_size) * cfg_.vit_patch_size * 3;
    const std::size_t nc = static_cast<std::size_t>(cfg_.n_distortion_classes);
    const std::size_t nb = static_cast<std::size_t>(cfg_.n_blocks);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    for (auto& grad : g_) std::fill(grad.begin(), grad.end(), 0.0f);

    // ---- forward ----
    xin_.assign(B * T0 * pd, 0.0f);
    const int ps = cfg_.vit_patch_size;
    const int grid = cfg_.image_size / ps;
    for (std::size_t b = 0; b < B; ++b) {
      float* dst = xin_.data() + b * T0 * pd;
      const Image& img = patches[b];
      for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx)
          for (int y = 0; y < ps; ++y)
            for (int x2 = 0; x2 < ps; ++x2) {
              const std::uint8_t* px = img.at(gx * ps + x2, gy * ps + y);
              for (int c = 0; c < 3; ++c)
                *dst++ = (static_cast<float>(px[c]) / 255.0f - 0.5f) / 0.5f;
            }
    }

    const float* wpe = wp("patch_embed.w");
    const float* bpe = wp("patch_embed.b");
    const float* cls = wp("cls_token");
    const float* pos = wp("pos_embed");

    // token matrix per batch: row layout [cls; patch tokens], then + pos
    x_.assign((nb + 1) * B * T * d, 0.0f);  // x_[l] = input of block l; x_[nb] = encoder output
    emb_.assign(B * T0 * d, 0.0f);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T0; ++t)
        std::copy(bpe, bpe + d, emb_.data() + (b * T0 + t) * d);
    detail::sgemm_acc(xin_.data(), wpe, emb_.data(), B * T0, pd, d);
    for (std::size_t b = 0; b < B; ++b) {
      float* xb = x_.data() + (b * T) * d;
      for (std::size_t j = 0; j < d; ++j) xb[j] = cls[j] + pos[j];
      for (std::size_t t = 0; t < T0; ++t)
        for (std::size_t j = 0; j < d; ++j)
          xb[(t + 1) * d + j] = emb_[(b * T0 + t) * d + j] + pos[(t + 1) * d + j];
    }

    n1_.assign(nb * B * T * d, 0.0f);
    mu1_.assign(nb * B * T, 0.0f);
    rs1_.assign(nb * B * T, 0.0f);
    qkv_.assign(nb * B * T * 3 * d, 0.0f);
    attn_.assign(nb * B * H * T * T, 0.0f);
    ao_.assign(nb * B * T * d, 0.0f);
    xa_.assign(nb * B * T * d, 0.0f);  // after attention residual
    n2_.assign(nb * B * T * d, 0.0f);
    mu2_.assign(nb * B * T, 0.0f);
    rs2_.assign(nb * B * T, 0.0f);
    h1_.assign(nb * B * T * hid, 0.0f);
    gh_.assign(nb * B * T * hid, 0.0f);

    std::vector<float> qh(T * dh), kh(T * dh), vh(T * dh), oh(T * dh);
    for (std::size_t l = 0; l < nb; ++l) {
      const std::string pre = "block" + std::to_string(l) + ".";
      const float* xl = x_.data() + l * B * T * d;
      float* xnext = x_.data() + (l + 1) * B * T * d;
      float* n1 = n1_.data() + l * B * T * d;
      float* qkv = qkv_.data() + l * B * T * 3 * d;
      float* attn = attn_.data() + l * B * H * T * T;
      float* ao = ao_.data() + l * B * T * d;
      float* xa = xa_.data() + l * B * T * d;
      float* n2 = n2_.data() + l * B * T * d;
      float* h1 = h1_.data() + l * B * T * hid;
      float* gh = gh_.data() + l * B * T * hid;

      layer_norm_fwd(xl, wp(pre + "ln1.gamma"), wp(pre + "ln1.beta"), n1,
                     mu1_.data() + l * B * T, rs1_.data() + l * B * T, B * T, d);
      fill_rows(qkv, wp(pre + "qkv.b"), B * T, 3 * d);
      detail::sgemm_acc(n1, wp(pre + "qkv.w"), qkv, B * T, d, 3 * d);

      for (std::size_t b = 0; b < B; ++b) {
        const float* qkvb = qkv + b * T * 3 * d;
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) {
              qh[t * dh + j] = qkvb[t * 3 * d + h * dh + j];
              kh[t * dh + j] = qkvb[t * 3 * d + d + h * dh + j];
              vh[t * dh + j] = qkvb[t * 3 * d + 2 * d + h * dh + j];
            }
          float* P = attn + (b * H + h) * T * T;
          std::fill(P, P + T * T, 0.0f);
          detail::sgemm_a_bt_acc(qh.data(), kh.data(), P, T, dh, T);
          for (std::size_t t = 0; t < T * T; ++t) P[t] *= scale;
          softmax_rows(P, T, T);
          std::fill(oh.begin(), oh.end(), 0.0f);
          detail::sgemm_acc(P, vh.data(), oh.data(), T, T, dh);
          float* aob = ao + b * T * d;
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) aob[t * d + h * dh + j] = oh[t * dh + j];
        }
      }

      // attention projection + residual
      std::copy(xl, xl + B * T * d, xa);
      add_rows(xa, wp(pre + "proj.b"), B * T, d);
      detail::sgemm_acc(ao, wp(pre + "proj.w"), xa, B * T, d, d);

      layer_norm_fwd(xa, wp(pre + "ln2.gamma"), wp(pre + "ln2.beta"), n2,
                     mu2_.data() + l * B * T, rs2_.data() + l * B * T, B * T, d);
      fill_rows(h1, wp(pre + "mlp1.b"), B * T, hid);
      detail::sgemm_acc(n2, wp(pre + "mlp1.w"), h1, B * T, d, hid);
      gelu_fwd(h1, gh, B * T * hid);
      std::copy(xa, xa + B * T * d, xnext);
      add_rows(xnext, wp(pre + "mlp2.b"), B * T, d);
      detail::sgemm_acc(gh, wp(pre + "mlp2.w"), xnext, B * T, hid, d);
    }

    nf_.assign(B * T * d, 0.0f);
    muf_.assign(B * T, 0.0f);
    rsf_.assign(B * T, 0.0f);
    layer_norm_fwd(x_.data() + nb * B * T * d, wp("ln_final.gamma"), wp("ln_final.beta"),
                   nf_.data(), muf_.data(), rsf_.data(), B * T, d);
    pooled_.assign(B * d, 0.0f);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 1; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j)
          pooled_[b * d + j] += nf_[(b * T + t) * d + j] / static_cast<float>(T0);

    // heads
    c1_.assign(B * 128, 0.0f);
    cg_.assign(B * 128, 0.0f);
    logits_.assign(B * nc, 0.0f);
    probs_.assign(B * nc, 0.0f);
    r1_.assign(B * 1024, 0.0f);
    rg_.assign(B * 1024, 0.0f);
    qhat_.assign(B, 0.0f);
    fill_rows(c1_.data(), wp("cls_head.b1"), B, 128);
    detail::sgemm_acc(pooled_.data(), wp("cls_head.w1"), c1_.data(), B, d, 128);
    gelu_fwd(c1_.data(), cg_.data(), B * 128);
    fill_rows(logits_.data(), wp("cls_head.b2"), B, nc);
    detail::sgemm_acc(cg_.data(), wp("cls_head.w2"), logits_.data(), B, 128, nc);
    std::copy(logits_.begin(), logits_.end(), probs_.begin());
    softmax_rows(probs_.data(), B, nc);
    fill_rows(r1_.data(), wp("reg_head.b1"), B, 1024);
    detail::sgemm_acc(pooled_.data(), wp("reg_head.w1"), r1_.data(), B, d, 1024);
    gelu_fwd(r1_.data(), rg_.data(), B * 1024);
    for (std::size_t b = 0; b < B; ++b) qhat_[b] = wp("reg_head.b2")[0];
    detail::sgemm_acc(rg_.data(), wp("reg_head.w2"), qhat_.data(), B, 1024, 1);

    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double dq = static_cast<double>(qhat_[b]) - mos01[b];
      double term = dq * dq;
      if (lambda > 0.0)
        for (std::size_t c = 0; c < nc; ++c) {
          const double pc = probs_[b * nc + c];
          const double diff = pc - (static_cast<int>(c) == cls_targets[b] ? 1.0 : 0.0);
          term += lambda * diff * diff;
        }
      loss += term;
    }
    loss /= static_cast<double>(B);

    // ---- backward ----
    const float invB = 1.0f / static_cast<float>(B);
    std::vector<float> dpooled(B * d, 0.0f);

    // regression head
    std::vector<float> dqhat(B);
    for (std::size_t b = 0; b < B; ++b)
      dqhat[b] = 2.0f * (qhat_[b] - static_cast<float>(mos01[b])) * invB;
    std::vector<float> drg(B * 1024, 0.0f);
    detail::sgemm_a_bt_acc(dqhat.data(), wp("reg_head.w2"), drg.data(), B, 1, 1024);
    detail::sgemm_at_b_acc(rg_.data(), dqhat.data(), gp("reg_head.w2"), B, 1024, 1);
    for (std::size_t b = 0; b < B; ++b) gp("reg_head.b2")[0] += dqhat[b];
    std::vector<float> dr1(B * 1024);
    gelu_bwd(r1_.data(), drg.data(), dr1.data(), B * 1024);
    detail::sgemm_a_bt_acc(dr1.data(), wp("reg_head.w1"), dpooled.data(), B, 1024, d);
    detail::sgemm_at_b_acc(pooled_.data(), dr1.data(), gp("reg_head.w1"), B, d, 1024);
    col_sums(dr1.data(), gp("reg_head.b1"), B, 1024);

    // classification head (softmax + MSE)
    if (lambda > 0.0) {
      std::vector<float> dlogits(B * nc);
      for (std::size_t b = 0; b < B; ++b) {
        const float* P = probs_.data() + b * nc;
        float* dL = dlogits.data() + b * nc;
        float dot = 0.0f;
        std::vector<float> dprob(nc);
        for (std::size_t c = 0; c < nc; ++c) {
          const float target = static_cast<int>(c) == cls_targets[b] ? 1.0f : 0.0f;
          dprob[c] = 2.0f * static_cast<float>(lambda) * (P[c] - target) * invB;
          dot += dprob[c] * P[c];
        }
        for (std::size_t c = 0; c < nc; ++c) dL[c] = P[c] * (dprob[c] - dot);
      }
      std::vector<float> dcg(B * 128, 0.0f);
      detail::sgemm_a_bt_acc(dlogits.data(), wp("cls_head.w2"), dcg.data(), B, nc, 128);
      detail::sgemm_at_b_acc(cg_.data(), dlogits.data(), gp("cls_head.w2"), B, 128, nc);
      col_sums(dlogits.data(), gp("cls_head.b2"), B, nc);
      std::vector<float> dc1(B * 128);
      gelu_bwd(c1_.data(), dcg.data(), dc1.data(), B * 128);
      detail::sgemm_a_bt_acc(dc1.data(), wp("cls_head.w1"), dpooled.data(), B, 128, d);
      detail::sgemm_at_b_acc(pooled_.data(), dc1.data(), gp("cls_head.w1"), B, d, 128);
      col_sums(dc1.data(), gp("cls_head.b1"), B, 128);
    }

    // pool -> final layer norm
    std::vector<float> dnf(B * T * d, 0.0f);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 1; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j)
          dnf[(b * T + t) * d + j] = dpooled[b * d + j] / static_cast<float>(T0);
    std::vector<float> dx(B * T * d, 0.0f);
    layer_norm_bwd(x_.data() + nb * B * T * d, wp("ln_final.gamma"), muf_.data(), rsf_.data(),
                   dnf.data(), dx.data(), gp("ln_final.gamma"), gp("ln_final.beta"), B * T, d);

    std::vector<float> dxa(B * T * d), dn2(B * T * d), dn1(B * T * d), dao(B * T * d),
        dqkv(B * T * 3 * d), dgh(B * T * hid), dh1(B * T * hid);
    std::vector<float> dqh(T * dh), dkh(T * dh), dvh(T * dh), doh(T * dh), dP(T * T);
    for (std::size_t l = nb; l-- > 0;) {
      const std::string pre = "block" + std::to_string(l) + ".";
      const float* xl = x_.data() + l * B * T * d;
      const float* n1 = n1_.data() + l * B * T * d;
      const float* qkv = qkv_.data() + l * B * T * 3 * d;
      const float* attn = attn_.data() + l * B * H * T * T;
      const float* ao = ao_.data() + l * B * T * d;
      const float* xa = xa_.data() + l * B * T * d;
      const float* n2 = n2_.data() + l * B * T * d;
      const float* h1 = h1_.data() + l * B * T * hid;
      const float* gh = gh_.data() + l * B * T * hid;

      // dx currently holds dL/d(block output) = d(xa + mlp path)
      std::copy(dx.begin(), dx.end(), dxa.begin());
      std::fill(dgh.begin(), dgh.end(), 0.0f);
      detail::sgemm_a_bt_acc(dx.data(), wp(pre + "mlp2.w"), dgh.data(), B * T, d, hid);
      detail::sgemm_at_b_acc(gh, dx.data(), gp(pre + "mlp2.w"), B * T, hid, d);
      col_sums(dx.data(), gp(pre + "mlp2.b"), B * T, d);
      gelu_bwd(h1, dgh.data(), dh1.data(), B * T * hid);
      std::fill(dn2.begin(), dn2.end(), 0.0f);
      detail::sgemm_a_bt_acc(dh1.data(), wp(pre + "mlp1.w"), dn2.data(), B * T, hid, d);
      detail::sgemm_at_b_acc(n2, dh1.data(), gp(pre + "mlp1.w"), B * T, d, hid);
      col_sums(dh1.data(), gp(pre + "mlp1.b"), B * T, hid);
      layer_norm_bwd(xa, wp(pre + "ln2.gamma"), mu2_.data() + l * B * T, rs2_.data() + l * B * T,
                     dn2.data(), dxa.data(), gp(pre + "ln2.gamma"), gp(pre + "ln2.beta"), B * T, d);

      // dxa holds dL/d(xa); split into residual input and attention projection
      std::copy(dxa.begin(), dxa.end(), dx.begin());  // toward xl via residual
      std::fill(dao.begin(), dao.end(), 0.0f);
      detail::sgemm_a_bt_acc(dxa.data(), wp(pre + "proj.w"), dao.data(), B * T, d, d);
      detail::sgemm_at_b_acc(ao, dxa.data(), gp(pre + "proj.w"), B * T, d, d);
      col_sums(dxa.data(), gp(pre + "proj.b"), B * T, d);

      std::fill(dqkv.begin(), dqkv.end(), 0.0f);
      std::vector<float> qh2(T * dh), kh2(T * dh), vh2(T * dh);
      for (std::size_t b = 0; b < B; ++b) {
        const float* qkvb = qkv + b * T * 3 * d;
        float* dqkvb = dqkv.data() + b * T * 3 * d;
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) {
              qh2[t * dh + j] = qkvb[t * 3 * d + h * dh + j];
              kh2[t * dh + j] = qkvb[t * 3 * d + d + h * dh + j];
              vh2[t * dh + j] = qkvb[t * 3 * d + 2 * d + h * dh + j];
              doh[t * dh + j] = dao[(b * T + t) * d + h * dh + j];
            }
          const float* P = attn + (b * H + h) * T * T;
          std::fill(dP.begin(), dP.end(), 0.0f);
          detail::sgemm_a_bt_acc(doh.data(), vh2.data(), dP.data(), T, dh, T);
          std::fill(dvh.begin(), dvh.end(), 0.0f);
          detail::sgemm_at_b_acc(P, doh.data(), dvh.data(), T, T, dh);
          // softmax backward rows, then undo the 1/sqrt(dh) scaling
          for (std::size_t t = 0; t < T; ++t) {
            const float* Pr = P + t * T;
            float* dPr = dP.data() + t * T;
            float dot = 0.0f;
            for (std::size_t u = 0; u < T; ++u) dot += dPr[u] * Pr[u];
            for (std::size_t u = 0; u < T; ++u) dPr[u] = Pr[u] * (dPr[u] - dot) * scale;
          }
          std::fill(dqh.begin(), dqh.end(), 0.0f);
          detail::sgemm_acc(dP.data(), kh2.data(), dqh.data(), T, T, dh);
          std::fill(dkh.begin(), dkh.end(), 0.0f);
          detail::sgemm_at_b_acc(dP.data(), qh2.data(), dkh.data(), T, T, dh);
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < dh; ++j) {
              dqkvb[t * 3 * d + h * dh + j] += dqh[t * dh + j];
              dqkvb[t * 3 * d + d + h * dh + j] += dkh[t * dh + j];
              dqkvb[t * 3 * d + 2 * d + h * dh + j] += dvh[t * dh + j];
            }
        }
      }

      std::fill(dn1.begin(), dn1.end(), 0.0f);
      detail::sgemm_a_bt_acc(dqkv.data(), wp(pre + "qkv.w"), dn1.data(), B * T, 3 * d, d);
      detail::sgemm_at_b_acc(n1, dqkv.data(), gp(pre + "qkv.w"), B * T, d, 3 * d);
      col_sums(dqkv.data(), gp(pre + "qkv.b"), B * T, 3 * d);
      layer_norm_bwd(xl, wp(pre + "ln1.gamma"), mu1_.data() + l * B * T, rs1_.data() + l * B * T,
                     dn1.data(), dx.data(), gp(pre + "ln1.gamma"), gp(pre + "ln1.beta"), B * T, d);
    }

    // token matrix -> embeddings
    float* gcls = gp("cls_token");
    float* gpos = gp("pos_embed");
    std::vector<float> demb(B * T0 * d);
    for (std::size_t b = 0; b < B; ++b) {
      const float* dxb = dx.data() + b * T * d;
      for (std::size_t j = 0; j < d; ++j) {
        gcls[j] += dxb[j];
        gpos[j] += dxb[j];
      }
      for (std::size_t t = 0; t < T0; ++t)
        for (std::size_t j = 0; j < d; ++j) {
          gpos[(t + 1) * d + j] += dxb[(t + 1) * d + j];
          demb[(b * T0 + t) * d + j] = dxb[(t + 1) * d + j];
        }
    }
    detail::sgemm_at_b_acc(xin_.data(), demb.data(), gp("patch_embed.w"), B * T0, pd, d);
    col_sums(demb.data(), gp("patch_embed.b"), B * T0, d);

    // hand the gradients to the 64-bit optimizer
    for (std::size_t i = 0; i < g_.size(); ++i) {
      Tensor& t = params_.items[i].second;
      t.grad().assign(t.numel(), 0.0);
      for (std::size_t j = 0; j < g_[i].size(); ++j) t.grad()[j] = g_[i][j];
    }
    return loss;
  }

 private:
  const float* wp(const std::string& name) const { return w_[index_.at(name)].data(); }
  float* gp(const std::string& name) { return g_[index_.at(name)].data(); }

  static void fill_rows(float* out, const float* row, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(row, row + n, out + r * n);
  }
  static void add_rows(float* out, const float* row, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] += row[j];
  }
  static void col_sums(const float* a, float* out, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) out[j] += a[r * n + j];
  }
  static void softmax_rows(float* a, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
      float* x = a + r * n;
      float mx = x[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
      float sum = 0.0f;
      for (std::size_t j = 0; j < n; ++j) sum += (x[j] = std::exp(x[j] - mx));
      for (std::size_t j = 0; j < n; ++j) x[j] /= sum;
    }
  }
  static void gelu_fwd(const float* x, float* y, std::size_t n) {
    constexpr float kInvSqrt2 = 0.70710678f;
    for (std::size_t i = 0; i < n; ++i) y[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
  }
  static void gelu_bwd(const float* x, const float* dy, float* dx, std::size_t n) {
    constexpr float kInvSqrt2 = 0.70710678f;
    constexpr float kInvSqrt2Pi = 0.39894228f;
    for (std::size_t i = 0; i < n; ++i) {
      const float cdf = 0.5f * (1.0f + std::erf(x[i] * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x[i] * x[i]);
      dx[i] = dy[i] * (cdf + x[i] * pdf);
    }
  }
  static void layer_norm_fwd(const float* x, const float* gamma, const float* beta, float* y,
                             float* mu, float* rstd, std::size_t rows, std::size_t n) {
    constexpr float kEps = 1e-5f;
    for (std::size_t r = 0; r < rows; ++r) {
      const float* xr = x + r * n;
      float m = 0.0f;
      for (std::size_t j = 0; j < n; ++j) m += xr[j];
      m /= static_cast<float>(n);
      float var = 0.0f;
      for (std::size_t j = 0; j < n; ++j) var += (xr[j] - m) * (xr[j] - m);
      var /= static_cast<float>(n);
      const float rs = 1.0f / std::sqrt(var + kEps);
      mu[r] = m;
      rstd[r] = rs;
      float* yr = y + r * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] = (xr[j] - m) * rs * gamma[j] + beta[j];
    }
  }
  // accumulates dx into `dx` (+=) so residual gradients can be merged in place
  static void layer_norm_bwd(const float* x, const float* gamma, const float* mu,
                             const float* rstd, const float* dy, float* dx, float* dgamma,
                             float* dbeta, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
      const float* xr = x + r * n;
      const float* dyr = dy + r * n;
      float* dxr = dx + r * n;
      const float m = mu[r], rs = rstd[r];
      float sum_dn = 0.0f, sum_dnx = 0.0f;
      for (std::size_t j = 0; j < n; ++j) {
        const float xhat = (xr[j] - m) * rs;
        const float dn = dyr[j] * gamma[j];
        dgamma[j] += dyr[j] * xhat;
        dbeta[j] += dyr[j];
        sum_dn += dn;
        sum_dnx += dn * xhat;
      }
      const float inv_n = 1.0f / static_cast<float>(n);
      for (std::size_t j = 0; j < n; ++j) {
        const float xhat = (xr[j] - m) * rs;
        const float dn = dyr[j] * gamma[j];
        dxr[j] += rs * (dn - sum_dn * inv_n - xhat * sum_dnx * inv_n);
      }
    }
  }

  VitConfig cfg_;
  ParamSet& params_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<float>> w_, g_;
  // activation storage, reused across batches
  std::vector<float> xin_, emb_, x_, n1_, mu1_, rs1_, qkv_, attn_, ao_, xa_, n2_, mu2_, rs2_,
      h1_, gh_, nf_, muf_, rsf_, pooled_, c1_, cg_, logits_, probs_, r1_, rg_, qhat_;
};

Prediction average_crops(const std::vector<Image>& crops, const ParamSet& params,
                         const VitConfig& cfg) {
  Prediction pred;
  pred.class_probs.assign(cfg.n_distortion_classes, 0.0);
  double q = 0.0;
  for (const Image& crop : crops) {
    const Image sized = prepare_patch(crop, cfg);
    const auto [probs, qhat] = forward_heads(sized, cfg, params);
    q += qhat.item();
    for (int c = 0; c < cfg.n_distortion_classes; ++c) pred.class_probs[c] += probs.data()[c];
  }
  const double inv = 1.0 / static_cast<double>(crops.size());
  q *= inv;
  for (double& p : pred.class_probs) p *= inv;
  pred.quality_score = q * 100.0;  // back to the MOS scale
  pred.predicted_class = static_cast<int>(
      std::max_element(pred.class_probs.begin(), pred.class_probs.end()) - pred.class_probs.begin());
  return pred;
}

}  // namespace

double fused_batch_grads(const std::vector<Image>& patches, const std::vector<int>& class_targets,
                         const std::vector<double>& mos01, const VitConfig& cfg, ParamSet& params,
                         double lambda) {
  FusedVit engine(cfg, params);
  return engine.forward_backward(patches, class_targets, mos01, lambda);
}

Prediction predict_image(const Image& projection, const std::vector<std::uint8_t>* mask,
                         const ParamSet& params, const VitConfig& cfg, int k_crops,
                         std::uint64_t seed, int crop_size, double min_foreground) {
  if (k_crops <= 0) throw std::invalid_argument("predict: k_crops must be positive");
  ProjectionImage proj;
  proj.image = projection;
  if (mask && mask->size() == projection.pixels.size() / 3) {
    proj.background_mask = *mask;
  } else {
    // treat everything as foreground when no mask is available
    proj.background_mask.assign(projection.pixels.size() / 3, 1);
  }
  const auto patches = crop_patches(proj, k_crops, std::min({crop_size, projection.width, projection.height}),
                                    seed, min_foreground);
  std::vector<Image> crops;
  crops.reserve(patches.size());
  for (const Patch& p : patches) crops.push_back(p.pixels);
  return average_crops(crops, params, cfg);
}

Prediction predict_mesh(const TexturedMesh& mesh, const ParamSet& params, const VitConfig& cfg,
                        const RenderConfig& render_cfg, int k_crops, std::uint64_t seed,
                        int crop_size, double min_foreground) {
  const ProjectionImage proj = render_front(mesh, render_cfg);
  return predict_image(proj.image, &proj.background_mask, params, cfg, k_crops, seed, crop_size,
                       min_foreground);
}

TrainResult train(const std::vector<SampleRecord>& manifest, const FoldSplit& split,
                  const VitConfig& vit_cfg, const TrainConfig& train_cfg) {
  vit_cfg.validate();
  train_cfg.validate();

  const auto in_set = [](const std::vector<std::string>& set, const std::string& id) {
    return std::find(set.begin(), set.end(), id) != set.end();
  };
  std::vector<Row> train_rows, test_rows;
  for (const SampleRecord& rec : manifest) {
    Row row;
    row.rec = &rec;
    row.projection.image = load_image(rec.projection_path);
    // background is exactly the configured background color in corpus
    // projections; rebuild the mask from it
    row.projection.background_mask.assign(
        row.projection.image.pixels.size() / 3, 1);
    for (std::size_t i = 0; i < row.projection.background_mask.size(); ++i) {
      const std::uint8_t* px = row.projection.image.pixels.data() + 3 * i;
      if (px[0] == 0 && px[1] == 0 && px[2] == 0) row.projection.background_mask[i] = 0;
    }
    if (in_set(split.train_contents, rec.content_id))
      train_rows.push_back(std::move(row));
    else if (in_set(split.test_contents, rec.content_id))
      test_rows.push_back(std::move(row));
  }
  if (train_rows.empty()) throw std::invalid_argument("train: empty training split");

  const double lambda = vit_cfg.multitask_enabled ? vit_cfg.lambda : 0.0;
  TrainResult result;
  result.params = init_params(vit_cfg, derive_seed(train_cfg.seed, "init"));
  AdamOptimizer opt(result.params, train_cfg);
  std::unique_ptr<FusedVit> fused;
  if (train_cfg.float32_training) fused = std::make_unique<FusedVit>(vit_cfg, result.params);

  const auto crop_one = [&](const Row& row, std::uint64_t seed) {
    const int cs = std::min({train_cfg.crop_size, row.projection.width(), row.projection.height()});
    return prepare_patch(
        crop_patches(row.projection, 1, cs, seed, train_cfg.min_foreground).front().pixels, vit_cfg);
  };

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    // deterministic shuffle per epoch
    std::vector<std::size_t> order(train_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(train_cfg.seed, "shuffle/" + std::to_string(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
      std::vector<Image> patches;
      std::vector<int> ctargets;
      std::vector<double> qtargets;
      for (std::size_t k = start; k < end; ++k) {
        const Row& row = train_rows[order[k]];
        const std::uint64_t crop_seed = derive_seed(
            train_cfg.seed, "crop/" + std::to_string(epoch) + "/" + row.rec->content_id + "/" +
                                to_string(row.rec->spec.kind) + "/" +
                                std::to_string(row.rec->spec.level));
        patches.push_back(crop_one(row, crop_seed));
        ctargets.push_back(class_of(*row.rec));
        qtargets.push_back(row.rec->pseudo_mos / 100.0);
      }
      double loss_value = 0.0;
      if (fused) {
        loss_value = fused->forward_backward(patches, ctargets, qtargets, lambda);
      } else {
        std::vector<Tensor> probs, qhats;
        for (std::size_t k = 0; k < patches.size(); ++k) {
          const auto [p, q] = forward_heads(patches[k], vit_cfg, result.params);
          if (lambda > 0.0) probs.push_back(p);
          qhats.push_back(q);
        }
        const Tensor loss = joint_loss(probs, ctargets, qhats, qtargets, lambda,
                                       vit_cfg.n_distortion_classes);
        result.params.zero_grads();
        loss.backward();
        loss_value = loss.item();
      }
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: loss is not finite at epoch " + std::to_string(epoch));
      opt.step();
      if (fused) fused->refresh_weights();
      loss_sum += loss_value;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    if (!test_rows.empty()) {
      std::vector<double> pred_mos, true_mos;
      std::vector<int> pred_cls, true_cls;
      for (const Row& row : test_rows) {
        const std::uint64_t s = derive_seed(train_cfg.seed, "eval/" + row.rec->projection_path);
        const Prediction pr =
            predict_image(row.projection.image, &row.projection.background_mask, result.params,
                          vit_cfg, train_cfg.eval_crops, s, train_cfg.crop_size,
                          train_cfg.min_foreground);
        pred_mos.push_back(pr.quality_score);
        true_mos.push_back(row.rec->pseudo_mos);
        pred_cls.push_back(pr.predicted_class);
        true_cls.push_back(class_of(*row.rec));
      }
      log.test_srcc = srcc(pred_mos, true_mos);
      if (lambda > 0.0) log.test_acc = accuracy(pred_cls, true_cls);
    }
    result.log.push_back(log);
  }
  return result;
}

void save_epoch_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write epoch log: " + path);
  out << "epoch,train_loss,test_srcc,test_acc\n";
  char buf[128];
  for (const EpochLog& e : log) {
    if (e.test_acc >= 0.0)
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.test_srcc,
                    e.test_acc);
    else
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,\n", e.epoch, e.train_loss, e.test_srcc);
    out << buf;
  }
}

}  // namespace dhhqa
