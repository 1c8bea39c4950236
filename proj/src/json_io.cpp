#include "fmue/json_io.hpp"

namespace fmue {

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
                     {"depth", c.depth},           {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
                     {"channels", c.channels}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("patch_size").get_to(c.patch_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  c.channels = j.value("channels", 3);
}

void to_json(nlohmann::json& j, const LoRAConfig& c) {
  j = nlohmann::json{{"rank", c.rank},
                     {"scaling", c.scaling},
                     {"targets", c.targets},
                     {"adapt_all_blocks", c.adapt_all_blocks},
                     {"init_std", c.init_std},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, LoRAConfig& c) {
  j.at("rank").get_to(c.rank);
  j.at("scaling").get_to(c.scaling);
  j.at("targets").get_to(c.targets);
  j.at("adapt_all_blocks").get_to(c.adapt_all_blocks);
  c.init_std = j.value("init_std", 0.02);
  c.seed = j.value("seed", std::uint64_t{1});
}

}  // namespace fmue
