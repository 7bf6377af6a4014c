#pragma once
// End-to-end finite-difference checks for the four losses, on tiny
// double-precision models. Composed losses carry much larger third
// derivatives than single ops, so these run at a smaller eps than the
// per-op checks.

#include "zidian/glyph.hpp"
#include "zidian/gradcheck.hpp"
#include "zidian/objectives.hpp"

namespace zidian {

inline std::vector<GradcheckResult> loss_gradchecks() {
    std::vector<GradcheckResult> results;

    std::vector<DictEntry> entries;
    {
        DictEntry ming;
        ming.surface = "明";
        ming.senses = {{"光线好", {"窗外很明。"}}, {"清楚", {"他讲得明。"}}};
        ming.synonyms = {"亮"};
        ming.antonyms = {"暗"};
        entries.push_back(ming);
        DictEntry an;
        an.surface = "暗";
        an.senses = {{"光线差", {"屋里很暗。"}}};
        an.antonyms = {"明"};
        entries.push_back(an);
        DictEntry liang;
        liang.surface = "亮";
        liang.senses = {{"有光", {"灯很亮。"}}};
        liang.synonyms = {"明"};
        entries.push_back(liang);
    }
    Lexicon lex = Lexicon::build(std::move(entries));
    Vocab vocab = Vocab::from_lexicon(lex);
    EncoderConfig ecfg;
    ecfg.d = 8;
    ecfg.layers = 1;
    ecfg.heads = 2;
    ecfg.ffn_mult = 2;
    ecfg.max_len = 32;
    ecfg.vocab_size = vocab.size();
    EncoderModel<double> model = EncoderModel<double>::init(ecfg, Rng(5));
    SequenceEncoder<double> enc{&model, &vocab, nullptr};

    const double eps = 1e-4;
    const DictEntry* ming = lex.find("明");
    results.push_back({"mem_loss", gradcheck_max_err([&] { return mem_loss(*ming, 0, enc); },
                                                     model.params(), eps)});
    ContrastPair pair{lex.index_of("明"), "亮", "暗", ContrastPair::NegKind::antonym, 1.0};
    results.push_back({"cl4sa_loss", gradcheck_max_err([&] { return cl4sa_loss(pair, lex, enc); },
                                                       model.params(), eps)});
    ELItem item{lex.index_of("明"), 0, ming->senses[0].examples[0]};
    results.push_back({"el_loss", gradcheck_max_err(
                                      [&] { return el_loss(item, lex, enc).loss; },
                                      model.params(), eps)});

    GlyphAtlas atlas;
    atlas.side = 10;
    Rng pix(5);
    for (char32_t c : {U'明', U'暗', U'亮'}) {
        std::vector<double> bm(100);
        for (double& v : bm) v = pix.uniform();
        atlas.insert(c, std::move(bm));
    }
    GlyphEncoder<double> glyph_enc = GlyphEncoder<double>::init(atlas.side, ecfg.d, Rng(6), 2, 3);
    Tensor<double> log_it = init_log_inv_temp<double>();
    std::vector<GlyphPairing> batch = {{U'明', "光线好"}, {U'暗', "光线差"}, {U'亮', "有光"}};
    std::vector<Tensor<double>> wrt = glyph_enc.params();
    for (auto& p : model.params()) wrt.push_back(p);
    wrt.push_back(log_it);
    results.push_back(
        {"glyph_contrastive_loss",
         gradcheck_max_err(
             [&] { return glyph_contrastive_loss(batch, glyph_enc, enc, atlas, log_it); }, wrt,
             eps)});
    return results;
}

}  // namespace zidian
