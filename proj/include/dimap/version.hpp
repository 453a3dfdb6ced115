// SPDX-License-Identifier: Apache-2.0
#pragma once

#define DIMAP_VERSION "0.1.0"
