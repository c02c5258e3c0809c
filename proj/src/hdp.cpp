#include "sceneminer/hdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"
#include "sceneminer/ranking.hpp"
#include "sampler_util.hpp"

namespace sceneminer {

using nlohmann::json;
using detail::LgammaShiftTable;

void HdpHyperParams::validate() const {
    if (!(gamma > 0.0) || !(alpha > 0.0) || !(d0 > 0.0))
        throw DataError("HdpHyperParams: gamma, alpha and d0 must be positive");
    if (n_sweeps < 1) throw DataError("HdpHyperParams: n_sweeps must be >= 1");
    if (n_burnin < 0 || n_burnin >= n_sweeps)
        throw DataError("HdpHyperParams: n_burnin must be < n_sweeps");
}

namespace {

// Collapsed joint score of an assignment configuration, computed from
// count tables. Tables are collapsed to one per (group, topic) pair, which
// keeps the score exact for that seating, label-symmetric and cheap.
//
//   group level: per group g with n_gk draws of topic k,
//                alpha^{T_g} * prod_k Gamma(n_gk) / rise(alpha, n_g)
//   top level:   gamma^K * prod_k Gamma(m_k) / rise(gamma, M)
//                with m_k = #groups using topic k
//   words:       prod_k DirMult(n_kw; d0)
struct JointScorer {
    double alpha, gamma, d0;
    int vocab;
    LgammaShiftTable lg_alpha, lg_gamma, lg_d0, lg_vd0, lg_int;

    JointScorer(double alpha_, double gamma_, double d0_, int vocab_)
        : alpha(alpha_), gamma(gamma_), d0(d0_), vocab(vocab_),
          lg_alpha(alpha_), lg_gamma(gamma_), lg_d0(d0_),
          lg_vd0(static_cast<double>(vocab_) * d0_), lg_int(0.0) {}

    // n_gk: per group, counts per topic slot; active: topic slots in use;
    // n_kw/n_k: word counts per slot.
    double score(const std::vector<std::vector<int>>& n_gk,
                 const std::vector<int>& active,
                 const std::vector<std::vector<int>>& n_kw,
                 const std::vector<long long>& n_k) {
        double lp = 0.0;

        std::vector<long long> m_k(n_kw.size(), 0);
        for (const auto& row : n_gk) {
            int t_g = 0;
            long long n_g = 0;
            for (int k : active) {
                const int c = row[k];
                if (c > 0) {
                    ++t_g;
                    ++m_k[k];
                    n_g += c;
                    lp += lg_int(c);  // lgamma(c), since lg_int has shift 0 -> lgamma(c+0)
                }
            }
            if (n_g > 0) {
                lp += t_g * std::log(alpha);
                lp -= lg_alpha(static_cast<std::size_t>(n_g)) - lg_alpha(0);
            }
        }

        long long m_total = 0;
        int k_used = 0;
        for (int k : active) {
            if (m_k[k] > 0) {
                ++k_used;
                m_total += m_k[k];
                lp += lg_int(static_cast<std::size_t>(m_k[k]));
            }
        }
        lp += k_used * std::log(gamma);
        lp -= lg_gamma(static_cast<std::size_t>(m_total)) - lg_gamma(0);

        for (int k : active) {
            lp += lg_vd0(0) - lg_vd0(static_cast<std::size_t>(n_k[k]));
            const auto& row = n_kw[k];
            for (int w = 0; w < vocab; ++w)
                if (row[w] > 0) lp += lg_d0(static_cast<std::size_t>(row[w])) - lg_d0(0);
        }
        return lp;
    }
};

// Sampler state with stable topic slots; freed slots are recycled so
// count tables never need relabeling.
struct HdpSampler {
    const HdpHyperParams& hp;
    int vocab;
    std::mt19937_64 rng;

    std::vector<std::vector<int>> docs;  // non-empty clips only
    std::vector<int> doc_clip;           // original clip position per doc
    std::vector<std::vector<int>> z;     // slot label per token

    std::vector<int> active;             // slots in use, in creation order
    std::vector<int> free_slots;
    std::vector<std::vector<int>> n_dk;  // docs x capacity
    std::vector<std::vector<int>> n_kw;  // capacity x vocab
    std::vector<long long> n_k;          // capacity
    std::vector<double> beta;            // capacity; mass of each active slot
    double beta_u = 1.0;                 // remaining stick mass

    std::vector<double> probs;           // scratch

    HdpSampler(const Corpus& corpus, const HdpHyperParams& hp_)
        : hp(hp_), vocab(corpus.grid.codebook_size()), rng(hp_.seed) {
        for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
            if (corpus.clips[i].words.empty()) continue;
            docs.push_back(corpus.clips[i].words);
            doc_clip.push_back(static_cast<int>(i));
        }
        z.resize(docs.size());
        for (std::size_t d = 0; d < docs.size(); ++d) z[d].assign(docs[d].size(), -1);
    }

    int capacity() const { return static_cast<int>(n_k.size()); }

    int alloc_slot() {
        if (!free_slots.empty()) {
            int s = free_slots.back();
            free_slots.pop_back();
            active.push_back(s);
            return s;
        }
        int s = capacity();
        for (auto& row : n_dk) row.push_back(0);
        n_kw.emplace_back(vocab, 0);
        n_k.push_back(0);
        beta.push_back(0.0);
        active.push_back(s);
        return s;
    }

    void release_slot(int s) {
        beta_u += beta[s];
        beta[s] = 0.0;
        active.erase(std::find(active.begin(), active.end(), s));
        free_slots.push_back(s);
    }

    void add_token(int d, std::size_t i, int slot) {
        const int w = docs[d][i];
        z[d][i] = slot;
        ++n_dk[d][slot];
        ++n_kw[slot][w];
        ++n_k[slot];
    }

    void remove_token(int d, std::size_t i) {
        const int slot = z[d][i];
        const int w = docs[d][i];
        --n_dk[d][slot];
        --n_kw[slot][w];
        if (--n_k[slot] == 0) release_slot(slot);
        z[d][i] = -1;
    }

    // Conditional draw for one token; counts must exclude it.
    int sample_slot(int d, int w) {
        const double vd0 = vocab * hp.d0;
        probs.clear();
        double total = 0.0;
        for (int k : active) {
            const double p = (n_dk[d][k] + hp.alpha * beta[k]) *
                             (n_kw[k][w] + hp.d0) / (n_k[k] + vd0);
            probs.push_back(p);
            total += p;
        }
        const double p_new = hp.alpha * beta_u / vocab;
        total += p_new;

        double u = detail::draw_uniform(rng) * total;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            u -= probs[j];
            if (u < 0.0) return active[j];
        }
        // new topic: split the remaining stick
        const int s = alloc_slot();
        const double nu = detail::draw_beta(rng, 1.0, hp.gamma);
        beta[s] = nu * beta_u;
        beta_u *= (1.0 - nu);
        return s;
    }

    void init() {
        n_dk.assign(docs.size(), {});
        for (std::size_t d = 0; d < docs.size(); ++d)
            for (std::size_t i = 0; i < docs[d].size(); ++i)
                add_token(static_cast<int>(d), i, sample_slot(static_cast<int>(d), docs[d][i]));
    }

    void sweep() {
        for (std::size_t d = 0; d < docs.size(); ++d) {
            for (std::size_t i = 0; i < docs[d].size(); ++i) {
                remove_token(static_cast<int>(d), i);
                add_token(static_cast<int>(d), i, sample_slot(static_cast<int>(d), docs[d][i]));
            }
        }
        resample_beta();
    }

    // Auxiliary table counts, then global weights (Dirichlet over active
    // slot table totals plus the leftover gamma mass).
    void resample_beta() {
        std::vector<double> m(capacity(), 0.0);
        for (std::size_t d = 0; d < docs.size(); ++d)
            for (int k : active)
                if (n_dk[d][k] > 0)
                    m[k] += detail::draw_table_count(rng, hp.alpha * beta[k], n_dk[d][k]);

        double total = 0.0;
        for (int k : active) {
            m[k] = detail::draw_gamma(rng, std::max(m[k], 1.0));
            total += m[k];
        }
        double rest = detail::draw_gamma(rng, hp.gamma);
        total += rest;
        for (int k : active) beta[k] = m[k] / total;
        beta_u = rest / total;
    }
};

}  // namespace

ActivityModel fit_hdp(const Corpus& corpus, const HdpHyperParams& hyper) {
    hyper.validate();
    corpus.validate();
    if (corpus.clips.empty()) throw DataError("fit_hdp: empty corpus");
    if (corpus.total_tokens() == 0) throw DataError("fit_hdp: corpus has no tokens");

    std::size_t skipped = 0;
    for (const auto& c : corpus.clips)
        if (c.words.empty()) ++skipped;
    if (skipped > 0)
        std::cerr << "fit_hdp: skipping " << skipped << " empty clip(s)\n";

    HdpSampler s(corpus, hyper);
    s.init();

    JointScorer scorer(hyper.alpha, hyper.gamma, hyper.d0, s.vocab);

    double best_lp = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<int>> best_z;
    for (int sweep = 0; sweep < hyper.n_sweeps; ++sweep) {
        s.sweep();
        if (sweep < hyper.n_burnin) continue;
        const double lp = scorer.score(s.n_dk, s.active, s.n_kw, s.n_k);
        if (lp > best_lp) {
            best_lp = lp;
            best_z = s.z;
        }
    }

    // Compact slot labels of the selected sample to 0..K-1.
    std::vector<int> slot_to_topic(s.capacity(), -1);
    int n_topics = 0;
    for (const auto& zd : best_z)
        for (int slot : zd)
            if (slot_to_topic[slot] < 0) slot_to_topic[slot] = n_topics++;

    ActivityModel model;
    model.hyper = hyper;
    model.codebook_size = s.vocab;
    model.n_topics = n_topics;
    model.counts.assign(n_topics, 0);
    model.assignments.assign(corpus.clips.size(), {});

    std::vector<std::vector<std::int64_t>> n_kw(n_topics, std::vector<std::int64_t>(s.vocab, 0));
    for (std::size_t d = 0; d < s.docs.size(); ++d) {
        auto& row = model.assignments[s.doc_clip[d]];
        row.resize(s.docs[d].size());
        for (std::size_t i = 0; i < s.docs[d].size(); ++i) {
            const int k = slot_to_topic[best_z[d][i]];
            row[i] = k;
            ++model.counts[k];
            ++n_kw[k][s.docs[d][i]];
        }
    }

    model.phi.assign(n_topics, std::vector<double>(s.vocab, 0.0));
    const double vd0 = s.vocab * hyper.d0;
    for (int k = 0; k < n_topics; ++k) {
        const double denom = static_cast<double>(model.counts[k]) + vd0;
        for (int w = 0; w < s.vocab; ++w)
            model.phi[k][w] = (static_cast<double>(n_kw[k][w]) + hyper.d0) / denom;
    }

    std::vector<double> counts_d(model.counts.begin(), model.counts.end());
    model.typical = select_typical_activities(counts_d);
    model.joint_lp = best_lp;
    return model;
}

double joint_log_prob(const ActivityModel& model, const Corpus& corpus) {
    if (model.assignments.size() != corpus.clips.size())
        throw DataError("joint_log_prob: assignment rows do not match corpus clips");

    const int vocab = model.codebook_size;
    const int K = model.n_topics;
    std::vector<std::vector<int>> n_gk;
    std::vector<std::vector<int>> n_kw(K, std::vector<int>(vocab, 0));
    std::vector<long long> n_k(K, 0);

    for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
        const auto& words = corpus.clips[c].words;
        const auto& zs = model.assignments[c];
        if (zs.size() != words.size())
            throw DataError("joint_log_prob: assignment length mismatch in clip " +
                            std::to_string(corpus.clips[c].clip_id));
        std::vector<int> row(K, 0);
        for (std::size_t i = 0; i < words.size(); ++i) {
            const int k = zs[i];
            if (k < 0 || k >= K) throw DataError("joint_log_prob: topic label out of range");
            const int w = words[i];
            if (w < 0 || w >= vocab) throw DataError("joint_log_prob: word index out of range");
            ++row[k];
            ++n_kw[k][w];
            ++n_k[k];
        }
        n_gk.push_back(std::move(row));
    }

    std::vector<int> active(K);
    std::iota(active.begin(), active.end(), 0);
    JointScorer scorer(model.hyper.alpha, model.hyper.gamma, model.hyper.d0, vocab);
    return scorer.score(n_gk, active, n_kw, n_k);
}

std::vector<int> select_typical_activities(const std::vector<double>& counts, double cutoff) {
    return select_by_cumulative_share(counts, cutoff);
}

void save_activity_model(const ActivityModel& model, const std::string& path,
                         const std::string& config_hash) {
    json j = {
        {"schema", "activities/1"},
        {"config_hash", config_hash},
        {"hyper",
         {{"gamma", model.hyper.gamma},
          {"alpha", model.hyper.alpha},
          {"d0", model.hyper.d0},
          {"sweeps", model.hyper.n_sweeps},
          {"burnin", model.hyper.n_burnin}}},
        {"seed", model.hyper.seed},
        {"codebook_size", model.codebook_size},
        {"K", model.n_topics},
        {"phi", model.phi},
        {"counts", model.counts},
        {"typical", model.typical},
        {"joint_lp", model.joint_lp},
    };
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_activity_model: cannot open " + path);
    f << j.dump() << '\n';
    if (!f) throw DataError("save_activity_model: write failed for " + path);
}

ActivityModel load_activity_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_activity_model: cannot open " + path);
    ActivityModel model;
    try {
        json j = json::parse(f);
        if (j.at("schema").get<std::string>() != "activities/1")
            throw DataError("load_activity_model: unsupported schema in " + path);
        model.hyper.gamma = j.at("hyper").at("gamma").get<double>();
        model.hyper.alpha = j.at("hyper").at("alpha").get<double>();
        model.hyper.d0 = j.at("hyper").at("d0").get<double>();
        model.hyper.n_sweeps = j.at("hyper").at("sweeps").get<int>();
        model.hyper.n_burnin = j.at("hyper").at("burnin").get<int>();
        model.hyper.seed = j.at("seed").get<std::uint64_t>();
        model.codebook_size = j.at("codebook_size").get<int>();
        model.n_topics = j.at("K").get<int>();
        model.phi = j.at("phi").get<std::vector<std::vector<double>>>();
        model.counts = j.at("counts").get<std::vector<std::int64_t>>();
        model.typical = j.at("typical").get<std::vector<int>>();
        model.joint_lp = j.value("joint_lp", 0.0);
    } catch (const json::exception& e) {
        throw DataError("load_activity_model: malformed " + path + ": " + e.what());
    }
    if (model.phi.size() != static_cast<std::size_t>(model.n_topics))
        throw DataError("load_activity_model: phi row count mismatch in " + path);
    for (const auto& row : model.phi)
        if (row.size() != static_cast<std::size_t>(model.codebook_size))
            throw DataError("load_activity_model: phi row width mismatch in " + path);
    return model;
}

}  // namespace sceneminer
