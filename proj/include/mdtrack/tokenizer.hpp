#pragma once

#include <optional>
#include <utility>

#include "mdtrack/nn.hpp"

namespace mdtrack {

enum class Modality : std::uint8_t { RGB = 0, T = 1, E = 2, D = 3 };
enum class Role : std::uint8_t { Template = 0, Search = 1 };

const char* modality_name(Modality m);
Modality modality_from_string(const std::string& s);

// One input image of one modality. Pixels are [3,H,W] in [0,1];
// single-channel sources arrive already replicated to 3 channels.
struct Frame {
    Modality modality = Modality::RGB;
    Tensor pixels;
};

// Token matrix [L,C] tagged with its origin; raster order, index = row*cols + col.
struct TokenSeq {
    Value tokens;
    Role role = Role::Search;
    Modality modality = Modality::RGB;
    int rows = 0;
    int cols = 0;
};

struct Segment {
    Role role = Role::Search;
    Modality modality = Modality::RGB;
    int offset = 0;
    int length = 0;
    int rows = 0;
    int cols = 0;
    bool context = false;  // carried-over tokens from the previous frame
};

// Joint backbone input: [Z_RGB | Z_X | S_RGB | S_X] (+ optional trailing
// context segment), with the segment map recording offsets and grids.
struct JointSeq {
    Value tokens;
    std::vector<Segment> segments;

    const Segment& find(Role role, bool rgb) const;
    void validate() const;  // throws ContractError on a corrupt map
};

struct EmbedWeights {
    Param* patch_w = nullptr;  // [3*P*P, C] (no bias: embedding is linear in the pixels)
    Param* pos_template = nullptr;
    Param* pos_search = nullptr;
    int patch = 16;
    int channels = 0;
    int template_tokens = 0;
    int search_tokens = 0;
};

EmbedWeights make_embed(ParamStore& store, int patch, int channels, int template_side,
                        int search_side, Rng& rng, Dtype dt);

// Splits the frame into P x P patches (flattened channel-major) and maps
// each through the shared learned projection. No positional term yet.
TokenSeq patch_embed(Graph& g, const Frame& frame, Role role, const EmbedWeights& w);

// Adds the role's learned positional table; tables are shared across
// modalities and sized for one fixed grid per role.
TokenSeq add_positional(TokenSeq seq, const EmbedWeights& w);

JointSeq assemble_joint(const TokenSeq& z_rgb, const TokenSeq& z_x, const TokenSeq& s_rgb,
                        const TokenSeq& s_x, std::optional<TokenSeq> context = std::nullopt);

std::pair<TokenSeq, TokenSeq> split_search(const JointSeq& joint);

}  // namespace mdtrack
