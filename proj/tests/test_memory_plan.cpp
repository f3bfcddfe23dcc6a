#include <algorithm>
#include <vector>

#include "doctest.h"
#include "support/graphgen.hpp"
#include "support/testutil.hpp"
#include "tinyforge/errors.hpp"
#include "tinyforge/memory_plan.hpp"
#include "tinyforge/rng.hpp"
#include "tinyforge/runtime.hpp"

using namespace tinyforge;

TEST_SUITE("memory_plan") {

TEST_CASE("buffer bytes follow the element count") {
    CHECK(buffer_bytes({2, 3, 4}) == 24);
    CHECK(buffer_bytes({7}) == 7);
    CHECK(buffer_bytes({}) == 1);
}

TEST_CASE("a pure chain peaks at the widest adjacent pair") {
    ModelGraph g;
    g.input_shape = {2, 8, 8};  // 128 bytes
    g.layers.push_back({.kind = LayerKind::Conv3x3, .out_channels = 4});
    g.layers.push_back(
        {.kind = LayerKind::Conv3x3, .in0 = 0, .out_channels = 6, .stride = 2});
    g.layers.push_back({.kind = LayerKind::Linear, .in0 = 1, .out_channels = 10});

    const MemoryPlan plan = plan_memory(g);
    // live pairs: 128+256, 256+96, 96+10
    CHECK(plan.arena_size == 384);
    CHECK(plan.outputs.size() == 3);
    CHECK(plan.scratch.size() == 3);
    CHECK(testutil::liveness_violation(g, plan).empty());

    // Outputs land on the side opposite their input, so a chain alternates.
    CHECK(plan.input.side == Placement::Head);
    CHECK(plan.outputs[0].side == Placement::Tail);
    CHECK(plan.outputs[1].side == Placement::Head);
    CHECK(plan.outputs[2].side == Placement::Tail);
}

TEST_CASE("a residual anchor stays pinned below later buffers") {
    ModelGraph g;
    g.input_shape = {4};
    g.layers.push_back({.kind = LayerKind::ReLU});
    g.layers.push_back({.kind = LayerKind::ReLU, .in0 = 0});
    LayerSpec add{.kind = LayerKind::ResidualAdd, .in0 = 1};
    add.in1 = 0;
    g.layers.push_back(add);

    const MemoryPlan plan = plan_memory(g);
    // At the join, the anchor (4), the middle (4), and the sum (4) coexist.
    CHECK(plan.arena_size == 12);
    CHECK(testutil::liveness_violation(g, plan).empty());
}

TEST_CASE("empty graph needs no arena") {
    ModelGraph g;
    g.input_shape = {3, 2, 2};
    const MemoryPlan plan = plan_memory(g);
    CHECK(plan.arena_size == 0);
    CHECK(plan.outputs.empty());

    const auto pm = PreparedModel::prepare(g);
    TensorI8 t(g.input_shape, g.input_q);
    t.data.assign(t.data.size(), 42);
    ExecutionStats stats;
    const TensorI8 out = pm.run(t, &stats);
    CHECK(out.data == t.data);
    CHECK(stats.arena_bytes == 0);
}

TEST_CASE("a graph that never reads its input is rejected") {
    ModelGraph g;
    g.input_shape = {4};
    LayerSpec l{.kind = LayerKind::ReLU};
    l.in0 = 0;          // self-reference instead of the graph input
    l.out_shape = {4};  // pre-shaped, so the planner sees it verbatim
    g.layers.push_back(l);
    CHECK_THROWS_AS(plan_memory(g), Error);
}

TEST_CASE("random graphs plan with no live overlaps") {
    Rng rng(0xA1E4A);
    for (int i = 0; i < 200; ++i) {
        CAPTURE(i);
        const ModelGraph g = testutil::random_graph(rng);
        const MemoryPlan plan = plan_memory(g);
        const std::string why = testutil::liveness_violation(g, plan);
        CHECK_MESSAGE(why.empty(), why);
    }
}

TEST_CASE("the executor stays inside the planned arena") {
    Rng rng(0xC4A42);
    for (int i = 0; i < 40; ++i) {
        CAPTURE(i);
        const ModelGraph g = testutil::random_graph(rng);
        const PreparedModel pm = PreparedModel::prepare(g);

        size_t max_end = pm.plan().input.offset + pm.plan().input.size;
        for (const BufferSlot& s : pm.plan().outputs) {
            max_end = std::max(max_end, s.offset + s.size);
        }
        CHECK(max_end <= pm.plan().arena_size);

        const TensorI8 input = testutil::random_input_for(g, rng);
        const auto report = testutil::run_with_canary(pm, input);
        CHECK(report.clean);
        // External and internally allocated arenas agree byte for byte.
        CHECK(report.output.data == pm.run(input).data);
    }
}

} // TEST_SUITE
