#include "sceneminer/hdp_hmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"
#include "sceneminer/ranking.hpp"
#include "sampler_util.hpp"

namespace sceneminer {

using nlohmann::json;
using detail::LgammaShiftTable;

namespace {

// Per-clip word histogram as sorted (word, count) pairs; emission
// likelihoods walk these instead of raw token lists.
struct ClipBag {
    std::vector<std::pair<int, int>> types;
    long long n_tokens = 0;
};

ClipBag make_bag(const std::vector<int>& words) {
    ClipBag bag;
    std::vector<int> sorted = words;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        bag.types.emplace_back(sorted[i], static_cast<int>(j - i));
        i = j;
    }
    bag.n_tokens = static_cast<long long>(words.size());
    return bag;
}

struct HmmSampler {
    const HdpHyperParams& hp;
    int vocab;
    std::mt19937_64 rng;

    std::vector<ClipBag> bags;  // one per clip, empty clips included
    int T = 0;

    std::vector<int> y;              // slot label per clip
    std::vector<int> active;
    std::vector<int> free_slots;
    std::vector<std::vector<long long>> n_trans;  // capacity x capacity, [from][to]
    std::vector<long long> n_from;                // outgoing transitions per slot
    std::vector<long long> n_clips;               // clips per slot
    std::vector<std::vector<long long>> e_kw;     // capacity x vocab
    std::vector<long long> e_k;
    std::vector<double> beta;
    double beta_u = 1.0;

    LgammaShiftTable lg_d0, lg_vd0;
    std::vector<double> logw;  // scratch

    HmmSampler(const Corpus& corpus, const HdpHyperParams& hp_)
        : hp(hp_), vocab(corpus.grid.codebook_size()), rng(hp_.seed),
          lg_d0(hp_.d0), lg_vd0(vocab * hp_.d0) {
        for (const auto& c : corpus.clips) bags.push_back(make_bag(c.words));
        T = static_cast<int>(bags.size());
        y.assign(T, -1);
    }

    int capacity() const { return static_cast<int>(n_from.size()); }

    int alloc_slot() {
        if (!free_slots.empty()) {
            int s = free_slots.back();
            free_slots.pop_back();
            active.push_back(s);
            return s;
        }
        int s = capacity();
        for (auto& row : n_trans) row.push_back(0);
        n_trans.emplace_back(capacity() + 1, 0);
        n_from.push_back(0);
        n_clips.push_back(0);
        e_kw.emplace_back(vocab, 0);
        e_k.push_back(0);
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

    void add_emission(int t, int slot) {
        for (auto [w, c] : bags[t].types) e_kw[slot][w] += c;
        e_k[slot] += bags[t].n_tokens;
        ++n_clips[slot];
    }

    void remove_emission(int t, int slot) {
        for (auto [w, c] : bags[t].types) e_kw[slot][w] -= c;
        e_k[slot] -= bags[t].n_tokens;
        --n_clips[slot];
    }

    // log p(bag_t | state slot) with the slot's current emission counts.
    double emission_loglik(int t, int slot) {
        double lp = 0.0;
        for (auto [w, c] : bags[t].types) {
            const std::size_t base = static_cast<std::size_t>(e_kw[slot][w]);
            lp += lg_d0(base + c) - lg_d0(base);
        }
        const std::size_t ek = static_cast<std::size_t>(e_k[slot]);
        lp -= lg_vd0(ek + bags[t].n_tokens) - lg_vd0(ek);
        return lp;
    }

    double emission_loglik_new(int t) {
        double lp = 0.0;
        for (auto [w, c] : bags[t].types) lp += lg_d0(c) - lg_d0(0);
        lp -= lg_vd0(static_cast<std::size_t>(bags[t].n_tokens)) - lg_vd0(0);
        return lp;
    }

    void resample_state(int t) {
        const int prev = t > 0 ? y[t - 1] : -1;
        const int next = t + 1 < T ? y[t + 1] : -1;

        const int old = y[t];
        if (old >= 0) {
            remove_emission(t, old);
            if (prev >= 0) { --n_trans[prev][old]; --n_from[prev]; }
            if (next >= 0) { --n_trans[old][next]; --n_from[old]; }
            if (n_clips[old] == 0) release_slot(old);
        }

        logw.clear();
        double max_lw = -std::numeric_limits<double>::infinity();
        for (int k : active) {
            double lw = 0.0;
            if (prev >= 0)
                lw += std::log(n_trans[prev][k] + hp.alpha * beta[k]);
            else
                lw += std::log(beta[k]);
            if (next >= 0) {
                const double corr = (prev == k && k == next) ? 1.0 : 0.0;
                const double den_corr = (prev == k) ? 1.0 : 0.0;
                lw += std::log(n_trans[k][next] + hp.alpha * beta[next] + corr) -
                      std::log(static_cast<double>(n_from[k]) + hp.alpha + den_corr);
            }
            lw += emission_loglik(t, k);
            logw.push_back(lw);
            max_lw = std::max(max_lw, lw);
        }
        // fresh state
        {
            double lw = 0.0;
            lw += prev >= 0 ? std::log(hp.alpha * beta_u) : std::log(beta_u);
            if (next >= 0) lw += std::log(beta[next]);
            lw += emission_loglik_new(t);
            logw.push_back(lw);
            max_lw = std::max(max_lw, lw);
        }

        double total = 0.0;
        for (double& lw : logw) {
            lw = std::exp(lw - max_lw);
            total += lw;
        }
        double u = detail::draw_uniform(rng) * total;
        int chosen = -1;
        for (std::size_t j = 0; j < logw.size(); ++j) {
            u -= logw[j];
            if (u < 0.0) {
                chosen = j < active.size() ? active[j] : -1;
                break;
            }
        }
        if (chosen < 0) {
            chosen = alloc_slot();
            const double nu = detail::draw_beta(rng, 1.0, hp.gamma);
            beta[chosen] = nu * beta_u;
            beta_u *= (1.0 - nu);
        }

        y[t] = chosen;
        add_emission(t, chosen);
        if (prev >= 0) { ++n_trans[prev][chosen]; ++n_from[prev]; }
        if (next >= 0) { ++n_trans[chosen][next]; ++n_from[chosen]; }
    }

    void init() {
        for (int t = 0; t < T; ++t) resample_state(t);
    }

    void sweep() {
        for (int t = 0; t < T; ++t) resample_state(t);
        resample_beta();
    }

    void resample_beta() {
        std::vector<double> m(capacity(), 0.0);
        for (int j : active)
            for (int k : active)
                if (n_trans[j][k] > 0)
                    m[k] += detail::draw_table_count(rng, hp.alpha * beta[k], n_trans[j][k]);
        m[y[0]] += 1.0;  // the initial state draws from the global weights

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

// Collapsed score of a labeled sequence; shares the seating collapse of
// the hdp module with transitions as the grouped draws.
double score_sequence(const std::vector<int>& y, const std::vector<ClipBag>& bags,
                      int n_states, int vocab, const HdpHyperParams& hp) {
    LgammaShiftTable lg_alpha(hp.alpha), lg_gamma(hp.gamma), lg_d0(hp.d0),
        lg_vd0(vocab * hp.d0), lg_int(0.0);

    std::vector<std::vector<long long>> n_trans(n_states, std::vector<long long>(n_states, 0));
    std::vector<long long> n_from(n_states, 0);
    for (std::size_t t = 1; t < y.size(); ++t) {
        ++n_trans[y[t - 1]][y[t]];
        ++n_from[y[t - 1]];
    }

    double lp = 0.0;
    std::vector<long long> m_k(n_states, 0);
    for (int j = 0; j < n_states; ++j) {
        int t_j = 0;
        for (int k = 0; k < n_states; ++k) {
            if (n_trans[j][k] > 0) {
                ++t_j;
                ++m_k[k];
                lp += lg_int(static_cast<std::size_t>(n_trans[j][k]));
            }
        }
        if (n_from[j] > 0) {
            lp += t_j * std::log(hp.alpha);
            lp -= lg_alpha(static_cast<std::size_t>(n_from[j])) - lg_alpha(0);
        }
    }
    if (!y.empty()) ++m_k[y[0]];

    long long m_total = 0;
    int k_used = 0;
    for (int k = 0; k < n_states; ++k) {
        if (m_k[k] > 0) {
            ++k_used;
            m_total += m_k[k];
            lp += lg_int(static_cast<std::size_t>(m_k[k]));
        }
    }
    lp += k_used * std::log(hp.gamma);
    lp -= lg_gamma(static_cast<std::size_t>(m_total)) - lg_gamma(0);

    std::vector<std::vector<long long>> e_kw(n_states, std::vector<long long>(vocab, 0));
    std::vector<long long> e_k(n_states, 0);
    for (std::size_t t = 0; t < y.size(); ++t) {
        for (auto [w, c] : bags[t].types) e_kw[y[t]][w] += c;
        e_k[y[t]] += bags[t].n_tokens;
    }
    for (int k = 0; k < n_states; ++k) {
        lp += lg_vd0(0) - lg_vd0(static_cast<std::size_t>(e_k[k]));
        for (int w = 0; w < vocab; ++w)
            if (e_kw[k][w] > 0)
                lp += lg_d0(static_cast<std::size_t>(e_kw[k][w])) - lg_d0(0);
    }
    return lp;
}

}  // namespace

StateModel fit_hdphmm(const Corpus& corpus, const HdpHyperParams& hyper) {
    hyper.validate();
    corpus.validate();
    if (corpus.clips.size() < 2) throw DataError("fit_hdphmm: need at least 2 clips");

    HmmSampler s(corpus, hyper);
    s.init();

    double best_lp = -std::numeric_limits<double>::infinity();
    std::vector<int> best_y;
    std::vector<double> best_beta;
    double best_beta_u = 1.0;
    for (int sweep = 0; sweep < hyper.n_sweeps; ++sweep) {
        s.sweep();
        if (sweep < hyper.n_burnin) continue;
        // score with labels compacted so the scorer sees 0..K-1
        std::vector<int> slot_to_state(s.capacity(), -1);
        int K = 0;
        std::vector<int> yc(s.T);
        for (int t = 0; t < s.T; ++t) {
            if (slot_to_state[s.y[t]] < 0) slot_to_state[s.y[t]] = K++;
            yc[t] = slot_to_state[s.y[t]];
        }
        const double lp = score_sequence(yc, s.bags, K, s.vocab, hyper);
        if (lp > best_lp) {
            best_lp = lp;
            best_y = s.y;
            best_beta = s.beta;
            best_beta_u = s.beta_u;
        }
    }

    std::vector<int> slot_to_state(s.capacity(), -1);
    int L = 0;
    for (int slot : best_y)
        if (slot_to_state[slot] < 0) slot_to_state[slot] = L++;

    StateModel model;
    model.hyper = hyper;
    model.codebook_size = s.vocab;
    model.n_states = L;
    model.state_seq.resize(s.T);
    for (int t = 0; t < s.T; ++t) model.state_seq[t] = slot_to_state[best_y[t]];

    // Global weights over realized states, renormalized without the
    // leftover stick so MAP transition columns sum to exactly 1.
    model.beta_weights.assign(L, 0.0);
    {
        double used = 0.0;
        for (int slot = 0; slot < s.capacity(); ++slot)
            if (slot_to_state[slot] >= 0) used += best_beta[slot];
        if (used <= 0.0) used = 1.0;
        for (int slot = 0; slot < s.capacity(); ++slot)
            if (slot_to_state[slot] >= 0)
                model.beta_weights[slot_to_state[slot]] = best_beta[slot] / used;
        (void)best_beta_u;
    }

    std::vector<std::vector<long long>> n_trans(L, std::vector<long long>(L, 0));
    std::vector<long long> n_from(L, 0);
    for (int t = 1; t < s.T; ++t) {
        ++n_trans[model.state_seq[t - 1]][model.state_seq[t]];
        ++n_from[model.state_seq[t - 1]];
    }
    model.transition.assign(L, std::vector<double>(L, 0.0));
    for (int j = 0; j < L; ++j)
        for (int i = 0; i < L; ++i)
            model.transition[i][j] =
                (static_cast<double>(n_trans[j][i]) + hyper.alpha * model.beta_weights[i]) /
                (static_cast<double>(n_from[j]) + hyper.alpha);

    std::vector<std::vector<long long>> e_kw(L, std::vector<long long>(s.vocab, 0));
    std::vector<long long> e_k(L, 0);
    for (int t = 0; t < s.T; ++t) {
        for (auto [w, c] : s.bags[t].types) e_kw[model.state_seq[t]][w] += c;
        e_k[model.state_seq[t]] += s.bags[t].n_tokens;
    }
    model.emission.assign(L, std::vector<double>(s.vocab, 0.0));
    const double vd0 = s.vocab * hyper.d0;
    for (int k = 0; k < L; ++k)
        for (int w = 0; w < s.vocab; ++w)
            model.emission[k][w] =
                (static_cast<double>(e_kw[k][w]) + hyper.d0) / (static_cast<double>(e_k[k]) + vd0);

    model.typical = select_typical_states(model.state_seq, L);
    model.joint_lp = best_lp;
    return model;
}

std::vector<int> select_typical_states(const std::vector<int>& state_seq,
                                       int n_states, double cutoff) {
    if (n_states < 1) throw DataError("select_typical_states: no states");
    std::vector<double> counts(n_states, 0.0);
    for (int s : state_seq) {
        if (s < 0 || s >= n_states)
            throw DataError("select_typical_states: state label out of range");
        counts[s] += 1.0;
    }
    return select_by_cumulative_share(counts, cutoff);
}

double transition_prob(const StateModel& model, int from, int to) {
    if (from < 0 || from >= model.n_states || to < 0 || to >= model.n_states)
        throw DataError("transition_prob: state out of range");
    return model.transition[to][from];
}

double state_joint_log_prob(const StateModel& model, const Corpus& corpus) {
    if (model.state_seq.size() != corpus.clips.size())
        throw DataError("state_joint_log_prob: sequence length does not match corpus");
    std::vector<ClipBag> bags;
    for (const auto& c : corpus.clips) bags.push_back(make_bag(c.words));
    for (int s : model.state_seq)
        if (s < 0 || s >= model.n_states)
            throw DataError("state_joint_log_prob: state label out of range");
    return score_sequence(model.state_seq, bags, model.n_states, model.codebook_size,
                          model.hyper);
}

void save_state_model(const StateModel& model, const std::string& path,
                      const std::string& config_hash) {
    json j = {
        {"schema", "states/1"},
        {"config_hash", config_hash},
        {"hyper",
         {{"gamma", model.hyper.gamma},
          {"alpha", model.hyper.alpha},
          {"d0", model.hyper.d0},
          {"sweeps", model.hyper.n_sweeps},
          {"burnin", model.hyper.n_burnin}}},
        {"seed", model.hyper.seed},
        {"codebook_size", model.codebook_size},
        {"L", model.n_states},
        {"emission", model.emission},
        {"transition", model.transition},
        {"convention", StateModel::kConvention},
        {"beta_weights", model.beta_weights},
        {"state_seq", model.state_seq},
        {"typical", model.typical},
        {"joint_lp", model.joint_lp},
    };
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_state_model: cannot open " + path);
    f << j.dump() << '\n';
    if (!f) throw DataError("save_state_model: write failed for " + path);
}

StateModel load_state_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_state_model: cannot open " + path);
    StateModel model;
    try {
        json j = json::parse(f);
        if (j.at("schema").get<std::string>() != "states/1")
            throw DataError("load_state_model: unsupported schema in " + path);
        if (j.at("convention").get<std::string>() != StateModel::kConvention)
            throw DataError("load_state_model: unsupported transition convention in " + path);
        model.hyper.gamma = j.at("hyper").at("gamma").get<double>();
        model.hyper.alpha = j.at("hyper").at("alpha").get<double>();
        model.hyper.d0 = j.at("hyper").at("d0").get<double>();
        model.hyper.n_sweeps = j.at("hyper").at("sweeps").get<int>();
        model.hyper.n_burnin = j.at("hyper").at("burnin").get<int>();
        model.hyper.seed = j.at("seed").get<std::uint64_t>();
        model.codebook_size = j.at("codebook_size").get<int>();
        model.n_states = j.at("L").get<int>();
        model.emission = j.at("emission").get<std::vector<std::vector<double>>>();
        model.transition = j.at("transition").get<std::vector<std::vector<double>>>();
        model.beta_weights = j.at("beta_weights").get<std::vector<double>>();
        model.state_seq = j.at("state_seq").get<std::vector<int>>();
        model.typical = j.at("typical").get<std::vector<int>>();
        model.joint_lp = j.value("joint_lp", 0.0);
    } catch (const json::exception& e) {
        throw DataError("load_state_model: malformed " + path + ": " + e.what());
    }
    return model;
}

}  // namespace sceneminer
