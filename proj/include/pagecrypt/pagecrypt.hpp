#pragma once

#include "pagecrypt/analyzer.hpp"
#include "pagecrypt/bench.hpp"
#include "pagecrypt/cipher.hpp"
#include "pagecrypt/client_runtime.hpp"
#include "pagecrypt/common.hpp"
#include "pagecrypt/memory.hpp"
#include "pagecrypt/orchestrator.hpp"
#include "pagecrypt/store.hpp"
#include "pagecrypt/trace.hpp"
#include "pagecrypt/transport.hpp"
#include "pagecrypt/window.hpp"
#include "pagecrypt/workers.hpp"
